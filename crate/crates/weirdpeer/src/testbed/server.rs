//! TinyChat server: one session, then exit.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream, UdpSocket};

use weirdpeer_core::digest::tags_equal;
use weirdpeer_core::frame::{self, header_length, FrameKind, RawFrame, HEADER_LEN, MAX_PAYLOAD, TRAILER_LEN};

use super::oracle::{self, enter};
use super::{loc, nonce, seal_post, session_key, Bug, Integrity, TestbedArgs, Transport};
use super::{DEFAULT_CAPACITY, MAX_CAPACITY, NONCE_LEN, SEQ_LEN};
use crate::cov::hit;
use crate::orchestrator::EXIT_ADDR_IN_USE;
use crate::peer::{self, ReadinessEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitHello,
    AwaitAuth,
    Established,
    Closed,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub integrity: Integrity,
    pub armed: BTreeSet<Bug>,
    pub secret: Vec<u8>,
}

/// What the transport should do after a frame.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Step {
    pub replies: Vec<Vec<u8>>,
    pub close: bool,
}

impl Step {
    fn drop_frame() -> Self {
        Self::default()
    }

    fn close() -> Self {
        Self {
            replies: Vec::new(),
            close: true,
        }
    }

    fn reply(frame: Vec<u8>) -> Self {
        Self {
            replies: vec![frame],
            close: false,
        }
    }
}

#[derive(Debug)]
pub struct Session {
    cfg: SessionConfig,
    phase: Phase,
    client_nonce: [u8; NONCE_LEN],
    server_nonce: [u8; NONCE_LEN],
    session_key: Option<[u8; 32]>,
    expect_seq: u32,
    table: Vec<Vec<u8>>,
    capacity: usize,
    errors: u32,
}

fn plain_frame(kind: FrameKind, payload: &[u8]) -> Vec<u8> {
    frame::encode(kind as u8, payload).expect("server replies fit a frame")
}

impl Session {
    pub fn new(cfg: SessionConfig, server_nonce: [u8; NONCE_LEN]) -> Self {
        Self {
            cfg,
            phase: Phase::AwaitHello,
            client_nonce: [0; NONCE_LEN],
            server_nonce,
            session_key: None,
            expect_seq: 0,
            table: Vec::new(),
            capacity: DEFAULT_CAPACITY,
            errors: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Frames rejected by an integrity or consistency check.
    pub fn errors(&self) -> u32 {
        self.errors
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    fn armed(&self, bug: Bug) -> bool {
        self.cfg.armed.contains(&bug)
    }

    fn reject(&mut self, location: u32) -> Step {
        hit(location);
        self.errors += 1;
        Step::drop_frame()
    }

    pub fn handle(&mut self, raw: &RawFrame) -> Step {
        hit(loc::FRAME);
        if self.cfg.integrity.checks_crc() && !raw.crc_ok() {
            return self.reject(loc::CRC_BAD);
        }
        let Some(kind) = raw.kind() else {
            return self.reject(loc::KIND_UNKNOWN);
        };
        match self.phase {
            Phase::AwaitHello => self.await_hello(kind, &raw.payload),
            Phase::AwaitAuth => self.await_auth(kind, &raw.payload),
            Phase::Established => self.dispatch_established(kind, &raw.payload),
            Phase::Closed => self.dispatch_closed(kind, &raw.payload),
        }
    }

    /// The peer went away; records where in the session that happened.
    pub fn end_of_stream(&self) {
        hit(match self.phase {
            Phase::AwaitHello | Phase::AwaitAuth => loc::EOF_HANDSHAKE,
            Phase::Established => loc::EOF_ESTABLISHED,
            Phase::Closed => loc::EOF_CLOSED,
        });
    }

    fn await_hello(&mut self, kind: FrameKind, payload: &[u8]) -> Step {
        hit(loc::AWAIT_HELLO);
        if kind != FrameKind::Hello {
            hit(loc::HELLO_VIOLATION);
            return Step::close();
        }
        if payload.len() != NONCE_LEN {
            hit(loc::HELLO_BADLEN);
            return Step::close();
        }
        self.client_nonce.copy_from_slice(payload);
        self.phase = Phase::AwaitAuth;
        hit(loc::CHALLENGE_TX);
        Step::reply(plain_frame(FrameKind::Challenge, &self.server_nonce))
    }

    fn await_auth(&mut self, kind: FrameKind, payload: &[u8]) -> Step {
        hit(loc::AWAIT_AUTH);
        if kind != FrameKind::Auth {
            hit(loc::AUTH_VIOLATION);
            return Step::close();
        }
        if payload.len() != 32 {
            hit(loc::AUTH_BADLEN);
            return Step::close();
        }
        let key = session_key(&self.cfg.secret, &self.client_nonce, &self.server_nonce);
        if self.cfg.integrity.uses_mac() {
            if !tags_equal(&key, payload) {
                self.errors += 1;
                hit(loc::AUTH_BAD);
                return Step::reply(plain_frame(FrameKind::Auth, &[0]));
            }
            hit(loc::AUTH_OK);
        } else {
            hit(loc::AUTH_UNCHECKED);
        }
        self.session_key = Some(key);
        self.phase = Phase::Established;
        Step::reply(plain_frame(FrameKind::Auth, &[1]))
    }

    fn mac_key(&self) -> Option<&[u8]> {
        if self.cfg.integrity.uses_mac() {
            self.session_key.as_ref().map(|k| &k[..])
        } else {
            None
        }
    }

    fn post_frame(&self, kind: FrameKind, seq: u32, body: &[u8]) -> Vec<u8> {
        plain_frame(kind, &seal_post(self.mac_key(), kind as u8, seq, body))
    }

    /// Checks tag and sequence number; returns `(seq, body)`.
    fn open_post<'p>(&mut self, kind: FrameKind, payload: &'p [u8]) -> Result<(u32, &'p [u8]), Step> {
        let tag_len = self.cfg.integrity.tag_len();
        if payload.len() < SEQ_LEN + tag_len {
            return Err(self.reject(loc::POST_SHORT));
        }
        let (sealed, tag) = payload.split_at(payload.len() - tag_len);
        if let Some(key) = self.mac_key() {
            let want = super::frame_tag(key, kind as u8, sealed);
            if !tags_equal(&want, tag) {
                return Err(self.reject(loc::MAC_BAD));
            }
            hit(loc::MAC_OK);
        }
        let seq = u32::from_le_bytes(sealed[..SEQ_LEN].try_into().expect("length checked"));
        if seq != self.expect_seq {
            return Err(self.reject(loc::SEQ_BAD));
        }
        hit(loc::SEQ_OK);
        self.expect_seq = self.expect_seq.wrapping_add(1);
        Ok((seq, &sealed[SEQ_LEN..]))
    }

    fn dispatch_established(&mut self, kind: FrameKind, payload: &[u8]) -> Step {
        let _f = enter("dispatch_established");
        hit(loc::ESTABLISHED);
        if matches!(kind, FrameKind::Hello | FrameKind::Challenge | FrameKind::Auth) {
            hit(loc::EST_VIOLATION);
            self.phase = Phase::Closed;
            return Step::close();
        }
        let (seq, body) = match self.open_post(kind, payload) {
            Ok(v) => v,
            Err(step) => return step,
        };
        match kind {
            FrameKind::Data => match self.handle_data(body) {
                Some(echo) => Step::reply(self.post_frame(FrameKind::Data, seq, &echo)),
                None => Step::drop_frame(),
            },
            FrameKind::Dup => {
                let status = self.handle_dup(body);
                Step::reply(self.post_frame(FrameKind::Dup, seq, &[status]))
            }
            _ => {
                hit(loc::BYE);
                let reply = self.post_frame(FrameKind::Bye, seq, &[]);
                self.phase = Phase::Closed;
                Step::reply(reply)
            }
        }
    }

    fn handle_data(&mut self, body: &[u8]) -> Option<Vec<u8>> {
        let _f = enter("handle_data");
        hit(loc::DATA);
        if body.len() < 2 {
            self.reject(loc::DATA_SHORT);
            return None;
        }
        let declared = usize::from(u16::from_le_bytes([body[0], body[1]]));
        let bytes = &body[2..];
        if declared > bytes.len() {
            if self.armed(Bug::B1LenCopy) {
                copy_payload(bytes, declared);
            }
            self.reject(loc::DECL_LONG);
            return None;
        }
        hit(if declared == 0 {
            loc::DECL_ZERO
        } else if declared < bytes.len() {
            loc::DECL_SHORT
        } else {
            loc::DECL_EXACT
        });
        let data = &bytes[..declared];
        if data.first() == Some(&b'!') {
            hit(loc::CMD);
            hit(if &data[1..] == b"stat" {
                loc::CMD_STAT
            } else {
                loc::CMD_OTHER
            });
        }
        if self.table.len() < self.capacity {
            self.table.push(data.to_vec());
            hit(loc::TABLE_PUSH);
        } else {
            hit(loc::TABLE_FULL);
        }
        Some(data.to_vec())
    }

    /// Returns the status byte for the reply.
    fn handle_dup(&mut self, body: &[u8]) -> u8 {
        let _f = enter("handle_dup");
        hit(loc::DUP);
        if body.len() != 3 {
            self.reject(loc::DUP_MALFORMED);
            return 0;
        }
        let capacity = u16::from_le_bytes([body[0], body[1]]);
        let count = usize::from(body[2]);
        if capacity > MAX_CAPACITY {
            hit(loc::CAP_BIG);
            return 0;
        }
        if capacity == 0 {
            hit(loc::CAP_ZERO);
        }
        let capacity = usize::from(capacity);
        if capacity < self.table.len() {
            hit(loc::CAP_SHRINK);
        }
        self.capacity = capacity;
        if self.table.is_empty() {
            hit(loc::DUP_EMPTY);
            return 0;
        }
        let fits = if self.armed(Bug::B2DupOverflow) {
            count <= capacity
        } else {
            self.table.len() + count <= capacity
        };
        if !fits {
            hit(loc::DUP_REJECT);
            return 0;
        }
        if count == 0 {
            hit(loc::DUP_ZERO);
        }
        self.dup_table_insert(count);
        hit(loc::DUP_OK);
        1
    }

    fn dup_table_insert(&mut self, count: usize) {
        let _f = enter("dup_table_insert");
        let last = self.table.last().cloned().unwrap_or_default();
        for _ in 0..count {
            if self.table.len() >= self.capacity {
                oracle::trigger(Bug::B2DupOverflow);
            }
            self.table.push(last.clone());
        }
    }

    fn dispatch_closed(&mut self, kind: FrameKind, payload: &[u8]) -> Step {
        let _f = enter("dispatch_closed");
        hit(loc::CLOSED);
        if kind != FrameKind::Data {
            hit(loc::CLOSED_OTHER);
            return Step::drop_frame();
        }
        self.handle_closed(payload);
        Step::drop_frame()
    }

    fn handle_closed(&mut self, payload: &[u8]) {
        let _f = enter("handle_closed");
        if self.armed(Bug::B3UseAfterClose) {
            verify_frame_mac(payload);
        }
        hit(loc::CLOSED_DATA);
    }
}

fn copy_payload(bytes: &[u8], declared: usize) {
    let _f = enter("copy_payload");
    if declared > bytes.len() {
        oracle::trigger(Bug::B1LenCopy);
    }
}

fn verify_frame_mac(_payload: &[u8]) {
    let _f = enter("verify_frame_mac");
    oracle::trigger(Bug::B3UseAfterClose);
}

enum FrameRead {
    Frame(RawFrame),
    Oversize,
    End,
}

fn read_tcp_frame(stream: &mut TcpStream) -> FrameRead {
    let mut header = [0u8; HEADER_LEN];
    if stream.read_exact(&mut header).is_err() {
        return FrameRead::End;
    }
    let len = header_length(header);
    if len > MAX_PAYLOAD {
        return FrameRead::Oversize;
    }
    let mut buf = vec![0u8; HEADER_LEN + len + TRAILER_LEN];
    buf[..HEADER_LEN].copy_from_slice(&header);
    if stream.read_exact(&mut buf[HEADER_LEN..]).is_err() {
        return FrameRead::End;
    }
    match RawFrame::parse(&buf) {
        Ok((f, _)) => FrameRead::Frame(f),
        Err(_) => FrameRead::End,
    }
}

fn serve_tcp_session(session: &mut Session, mut stream: TcpStream) {
    let _f = enter("serve_session");
    hit(loc::SESSION);
    loop {
        let raw = match read_tcp_frame(&mut stream) {
            FrameRead::Frame(f) => f,
            FrameRead::Oversize => {
                hit(loc::OVERSIZE);
                break;
            }
            FrameRead::End => {
                session.end_of_stream();
                break;
            }
        };
        let step = session.handle(&raw);
        for r in &step.replies {
            let _ = stream.write_all(r);
        }
        if step.close {
            break;
        }
    }
}

fn serve_udp_session(session: &mut Session, socket: &UdpSocket) {
    let _f = enter("serve_session");
    hit(loc::SESSION);
    let mut peer: Option<SocketAddr> = None;
    let mut buf = vec![0u8; 2 * (HEADER_LEN + MAX_PAYLOAD + TRAILER_LEN)];
    loop {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(v) => v,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => {
                session.end_of_stream();
                break;
            }
        };
        if *peer.get_or_insert(from) != from {
            continue;
        }
        let raw = match RawFrame::parse(&buf[..n]) {
            Ok((f, used)) if used == n => f,
            Ok(_) => {
                hit(loc::DGRAM_MALFORMED);
                continue;
            }
            Err(frame::FrameError::Oversize(_)) => {
                hit(loc::OVERSIZE);
                continue;
            }
            Err(_) => {
                hit(loc::DGRAM_MALFORMED);
                continue;
            }
        };
        let step = session.handle(&raw);
        for r in &step.replies {
            let _ = socket.send_to(r, from);
        }
        if step.close {
            break;
        }
    }
}

fn new_session(args: &TestbedArgs) -> Session {
    let cfg = SessionConfig {
        integrity: args.integrity,
        armed: args.armed(),
        secret: args.secret.0.clone(),
    };
    Session::new(cfg, nonce(args.seed, "server"))
}

/// Process entry point; returns the exit status.
pub fn server_main(args: &TestbedArgs) -> i32 {
    if let Err(e) = crate::cov::init() {
        eprintln!("tinychat-server: coverage map: {e}");
        return 1;
    }
    peer::connect_from_env();
    let _f = enter("server_main");
    hit(loc::START);
    let bind_to = (Ipv4Addr::LOCALHOST, args.port);
    let bind_failed = |e: io::Error| {
        eprintln!("tinychat-server: bind: {e}");
        if e.kind() == io::ErrorKind::AddrInUse {
            EXIT_ADDR_IN_USE
        } else {
            1
        }
    };
    match args.transport {
        Transport::Tcp => {
            let listener = match TcpListener::bind(bind_to) {
                Ok(l) => l,
                Err(e) => return bind_failed(e),
            };
            let addr = listener.local_addr().expect("bound socket has an address");
            peer::readiness_hook(ReadinessEvent::Bind, addr);
            peer::readiness_hook(ReadinessEvent::Listen, addr);
            loop {
                let stream = match listener.accept() {
                    Ok((s, _)) => s,
                    Err(e) => {
                        eprintln!("tinychat-server: accept: {e}");
                        return 1;
                    }
                };
                let mut session = new_session(args);
                serve_tcp_session(&mut session, stream);
                if !args.loop_mode {
                    return 0;
                }
            }
        }
        Transport::Udp => {
            let socket = match UdpSocket::bind(bind_to) {
                Ok(s) => s,
                Err(e) => return bind_failed(e),
            };
            let addr = socket.local_addr().expect("bound socket has an address");
            peer::readiness_hook(ReadinessEvent::Bind, addr);
            loop {
                let mut session = new_session(args);
                serve_udp_session(&mut session, &socket);
                if !args.loop_mode {
                    return 0;
                }
            }
        }
    }
}
