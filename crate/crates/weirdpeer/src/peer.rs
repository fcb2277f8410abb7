//! Peer side of the control channel.
//!
//! The orchestrator hands each peer one end of a socket pair and names its
//! descriptor in [`env::CONTROL_FD`]. Write failures are ignored: a peer
//! that cannot report simply falls back to the orchestrator's grace timer.

use std::cell::{Cell, RefCell};
use std::io::Write;
use std::net::SocketAddr;
use std::os::fd::FromRawFd;
use std::os::unix::net::UnixStream;

use weirdpeer_core::control::ControlMessage;

use crate::env;

thread_local! {
    static CHANNEL: RefCell<Option<UnixStream>> = const { RefCell::new(None) };
    static READY_SENT: Cell<bool> = const { Cell::new(false) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadinessEvent {
    Bind,
    Listen,
}

/// Adopts the control descriptor from the environment, if any.
pub fn connect_from_env() {
    let fd = std::env::var(env::CONTROL_FD).ok().and_then(|v| v.parse::<i32>().ok());
    let Some(fd) = fd else { return };
    // SAFETY: probe that the descriptor is open before taking ownership.
    if unsafe { libc::fcntl(fd, libc::F_GETFD) } < 0 {
        return;
    }
    // SAFETY: the orchestrator passed this descriptor for our exclusive use.
    let stream = unsafe { UnixStream::from_raw_fd(fd) };
    CHANNEL.with(|c| *c.borrow_mut() = Some(stream));
    READY_SENT.with(|r| r.set(false));
}

fn send(msg: &ControlMessage) {
    CHANNEL.with(|c| {
        if let Some(stream) = c.borrow_mut().as_mut() {
            if let Ok(bytes) = msg.encode() {
                let _ = stream.write_all(&bytes);
            }
        }
    });
}

/// Called after `bind` and after `listen`; only the first call reports.
pub fn readiness_hook(_event: ReadinessEvent, addr: SocketAddr) {
    if READY_SENT.with(|r| r.replace(true)) {
        return;
    }
    send(&ControlMessage::Ready {
        address: addr.ip().to_string(),
        port: addr.port(),
    });
}

pub fn connecting() {
    send(&ControlMessage::Connecting);
}

pub fn connected() {
    send(&ControlMessage::Connected);
}

pub fn peer_error(text: &str) {
    send(&ControlMessage::PeerError { text: text.into() });
}
