//! Control-channel messages between a peer runtime and the orchestrator.
//!
//! Each message is `kind u8, payload_len u16 (LE), payload`.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    /// Server is bound (and possibly listening).
    Ready {
        address: String,
        port: u16,
    },
    Connecting,
    Connected,
    PeerError {
        text: String,
    },
}

const READY: u8 = 1;
const CONNECTING: u8 = 2;
const CONNECTED: u8 = 3;
const PEER_ERROR: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControlError {
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("malformed payload for kind {0}")]
    Malformed(u8),
    #[error("payload too long")]
    TooLong,
}

impl ControlMessage {
    pub fn encode(&self) -> Result<Vec<u8>, ControlError> {
        let (kind, payload) = match self {
            ControlMessage::Ready { address, port } => {
                let mut p = Vec::with_capacity(2 + address.len());
                p.extend_from_slice(&port.to_le_bytes());
                p.extend_from_slice(address.as_bytes());
                (READY, p)
            }
            ControlMessage::Connecting => (CONNECTING, Vec::new()),
            ControlMessage::Connected => (CONNECTED, Vec::new()),
            ControlMessage::PeerError { text } => (PEER_ERROR, text.as_bytes().to_vec()),
        };
        let len = u16::try_from(payload.len()).map_err(|_| ControlError::TooLong)?;
        let mut out = Vec::with_capacity(3 + payload.len());
        out.push(kind);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Decodes one message from the front of `buf`. `Ok(None)` means more
    /// bytes are needed.
    pub fn decode(buf: &[u8]) -> Result<Option<(ControlMessage, usize)>, ControlError> {
        if buf.len() < 3 {
            return Ok(None);
        }
        let kind = buf[0];
        let len = usize::from(u16::from_le_bytes([buf[1], buf[2]]));
        if buf.len() < 3 + len {
            return Ok(None);
        }
        let payload = &buf[3..3 + len];
        let text = || {
            core::str::from_utf8(payload)
                .map(String::from)
                .map_err(|_| ControlError::Malformed(kind))
        };
        let msg = match kind {
            READY => {
                if payload.len() < 2 {
                    return Err(ControlError::Malformed(kind));
                }
                let port = u16::from_le_bytes([payload[0], payload[1]]);
                let address = core::str::from_utf8(&payload[2..])
                    .map_err(|_| ControlError::Malformed(kind))?
                    .into();
                ControlMessage::Ready { address, port }
            }
            CONNECTING if len == 0 => ControlMessage::Connecting,
            CONNECTED if len == 0 => ControlMessage::Connected,
            CONNECTING | CONNECTED => return Err(ControlError::Malformed(kind)),
            PEER_ERROR => ControlMessage::PeerError { text: text()? },
            other => return Err(ControlError::UnknownKind(other)),
        };
        Ok(Some((msg, 3 + len)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ready_layout() {
        let m = ControlMessage::Ready {
            address: "127.0.0.1".into(),
            port: 0x1234,
        };
        let bytes = m.encode().unwrap();
        assert_eq!(&bytes[..5], &[1, 11, 0, 0x34, 0x12]);
        assert_eq!(ControlMessage::decode(&bytes).unwrap(), Some((m, bytes.len())));
    }

    #[test]
    fn partial_and_stream() {
        let mut buf = ControlMessage::Connecting.encode().unwrap();
        buf.extend(ControlMessage::Connected.encode().unwrap());
        assert_eq!(ControlMessage::decode(&buf[..2]).unwrap(), None);
        let (first, used) = ControlMessage::decode(&buf).unwrap().unwrap();
        assert_eq!(first, ControlMessage::Connecting);
        assert_eq!(
            ControlMessage::decode(&buf[used..]).unwrap().unwrap().0,
            ControlMessage::Connected
        );
        assert_eq!(ControlMessage::decode(&[9, 0, 0]), Err(ControlError::UnknownKind(9)));
    }
}
