//! TinyChat wire frames.
//!
//! ```text
//! length u16 | type u8 | payload[length] | crc u32
//! ```
//! All integers little-endian; the CRC covers length, type and payload.

use alloc::vec::Vec;
use core::fmt;

use crc32fast::Hasher as Crc32;

pub const MAX_PAYLOAD: usize = 4096;
pub const HEADER_LEN: usize = 3;
pub const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Hello = 1,
    Challenge = 2,
    Auth = 3,
    Data = 4,
    Dup = 5,
    Bye = 6,
}

impl FrameKind {
    pub const ALL: [FrameKind; 6] = [
        FrameKind::Hello,
        FrameKind::Challenge,
        FrameKind::Auth,
        FrameKind::Data,
        FrameKind::Dup,
        FrameKind::Bye,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.get(usize::from(b).wrapping_sub(1)).copied()
    }

    /// Zero-based ordinal, as used by the client's dispatch switch.
    pub fn ordinal(self) -> usize {
        self as usize - 1
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FrameKind::Hello => "HELLO",
            FrameKind::Challenge => "CHALLENGE",
            FrameKind::Auth => "AUTH",
            FrameKind::Data => "DATA",
            FrameKind::Dup => "DUP",
            FrameKind::Bye => "BYE",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("need {0} more bytes")]
    Incomplete(usize),
    #[error("declared length {0} exceeds {MAX_PAYLOAD}")]
    Oversize(usize),
    #[error("payload of {0} bytes does not fit a frame")]
    PayloadTooLarge(usize),
}

pub fn frame_crc(length: u16, kind: u8, payload: &[u8]) -> u32 {
    let mut c = Crc32::new();
    c.update(&length.to_le_bytes());
    c.update(&[kind]);
    c.update(payload);
    c.finalize()
}

/// Encodes a frame with a correct length and checksum.
pub fn encode(kind: u8, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(payload.len()));
    }
    let length = payload.len() as u16;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&length.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(payload);
    out.extend_from_slice(&frame_crc(length, kind, payload).to_le_bytes());
    Ok(out)
}

/// A frame as received, before integrity checks or dispatch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub kind: u8,
    pub payload: Vec<u8>,
    pub crc: u32,
}

impl RawFrame {
    pub fn kind(&self) -> Option<FrameKind> {
        FrameKind::from_u8(self.kind)
    }

    pub fn crc_ok(&self) -> bool {
        frame_crc(self.payload.len() as u16, self.kind, &self.payload) == self.crc
    }

    /// Parses one frame from the front of `buf`, returning it and the number
    /// of bytes it occupied.
    pub fn parse(buf: &[u8]) -> Result<(RawFrame, usize), FrameError> {
        if buf.len() < HEADER_LEN {
            return Err(FrameError::Incomplete(HEADER_LEN - buf.len()));
        }
        let length = usize::from(u16::from_le_bytes([buf[0], buf[1]]));
        if length > MAX_PAYLOAD {
            return Err(FrameError::Oversize(length));
        }
        let total = HEADER_LEN + length + TRAILER_LEN;
        if buf.len() < total {
            return Err(FrameError::Incomplete(total - buf.len()));
        }
        let payload = buf[HEADER_LEN..HEADER_LEN + length].to_vec();
        let c = &buf[HEADER_LEN + length..total];
        let crc = u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        Ok((
            RawFrame {
                kind: buf[2],
                payload,
                crc,
            },
            total,
        ))
    }
}

/// Declared payload length from a frame header.
pub fn header_length(header: [u8; HEADER_LEN]) -> usize {
    usize::from(u16::from_le_bytes([header[0], header[1]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn encode_layout() {
        let bytes = encode(FrameKind::Data as u8, b"hi").unwrap();
        assert_eq!(&bytes[..5], &[2, 0, 4, b'h', b'i']);
        let crc = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        assert_eq!(crc, crate::digest::crc32(&[2, 0, 4, b'h', b'i']));
        let (frame, used) = RawFrame::parse(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert!(frame.crc_ok());
        assert_eq!(frame.kind(), Some(FrameKind::Data));
    }

    #[test]
    fn single_byte_corruption_breaks_crc() {
        let bytes = encode(FrameKind::Auth as u8, &[7u8; 32]).unwrap();
        for i in 0..bytes.len() {
            let mut c = bytes.clone();
            c[i] ^= 0x5A;
            match RawFrame::parse(&c) {
                Ok((f, _)) => assert!(!f.crc_ok() || i < 2, "corruption at {i} undetected"),
                Err(_) => assert!(i < 2),
            }
        }
    }

    #[test]
    fn limits() {
        assert_eq!(
            encode(4, &vec![0; MAX_PAYLOAD + 1]),
            Err(FrameError::PayloadTooLarge(MAX_PAYLOAD + 1))
        );
        assert!(encode(4, &vec![0; MAX_PAYLOAD]).is_ok());
        assert_eq!(RawFrame::parse(&[0xFF, 0xFF, 1]), Err(FrameError::Oversize(0xFFFF)));
        assert_eq!(RawFrame::parse(&[1, 0]), Err(FrameError::Incomplete(1)));
        assert_eq!(RawFrame::parse(&[1, 0, 4]), Err(FrameError::Incomplete(5)));
    }

    #[test]
    fn kind_ordinals() {
        for (i, k) in FrameKind::ALL.iter().enumerate() {
            assert_eq!(k.ordinal(), i);
            assert_eq!(FrameKind::from_u8(*k as u8), Some(*k));
        }
        assert_eq!(FrameKind::from_u8(0), None);
        assert_eq!(FrameKind::from_u8(7), None);
    }
}
