//! Recorded sessions: per record `dir u8, len u32, bytes`, little-endian,
//! no header. One record per frame (TCP) or per datagram (UDP).

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Direction {
    ClientToServer = 0,
    ServerToClient = 1,
}

impl Direction {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(Direction::ClientToServer),
            1 => Some(Direction::ServerToClient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("truncated record at byte {0}")]
    Truncated(usize),
    #[error("bad direction {dir} at byte {offset}")]
    BadDirection { dir: u8, offset: usize },
    #[error("transcript is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub records: Vec<Record>,
    /// Testbed seed in effect when the session was recorded, if known.
    pub origin_seed: Option<u64>,
}

impl Transcript {
    pub fn push(&mut self, direction: Direction, bytes: &[u8]) {
        self.records.push(Record {
            direction,
            bytes: bytes.to_vec(),
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Indices of client-to-server records.
    pub fn client_records(&self) -> impl Iterator<Item = usize> + '_ {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.direction == Direction::ClientToServer)
            .map(|(i, _)| i)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            encode_record(&mut out, r.direction, &r.bytes);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TranscriptError> {
        let mut records = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            if bytes.len() - pos < 5 {
                return Err(TranscriptError::Truncated(pos));
            }
            let direction = Direction::from_u8(bytes[pos]).ok_or(TranscriptError::BadDirection {
                dir: bytes[pos],
                offset: pos,
            })?;
            let len = u32::from_le_bytes([bytes[pos + 1], bytes[pos + 2], bytes[pos + 3], bytes[pos + 4]]) as usize;
            let start = pos + 5;
            if bytes.len() - start < len {
                return Err(TranscriptError::Truncated(pos));
            }
            records.push(Record {
                direction,
                bytes: bytes[start..start + len].to_vec(),
            });
            pos = start + len;
        }
        if records.is_empty() {
            return Err(TranscriptError::Empty);
        }
        Ok(Self {
            records,
            origin_seed: None,
        })
    }
}

pub fn encode_record(out: &mut Vec<u8>, direction: Direction, bytes: &[u8]) {
    out.push(direction as u8);
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let mut t = Transcript::default();
        t.push(Direction::ClientToServer, b"ab");
        t.push(Direction::ServerToClient, b"");
        let bytes = t.encode();
        assert_eq!(bytes, [0, 2, 0, 0, 0, b'a', b'b', 1, 0, 0, 0, 0]);
        assert_eq!(Transcript::decode(&bytes).unwrap(), t);
        assert_eq!(t.client_records().collect::<Vec<_>>(), [0]);
    }

    #[test]
    fn malformed() {
        assert_eq!(Transcript::decode(&[]), Err(TranscriptError::Empty));
        assert_eq!(
            Transcript::decode(&[0, 5, 0, 0, 0, 1]),
            Err(TranscriptError::Truncated(0))
        );
        assert_eq!(
            Transcript::decode(&[9, 0, 0, 0, 0]),
            Err(TranscriptError::BadDirection { dir: 9, offset: 0 })
        );
    }
}
