//! TinyChat client, instrumented as a weird peer.
//!
//! The script is fixed: HELLO, AUTH, three DATA frames, DUP, BYE. Faults
//! rather than script variation make sessions differ.

use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, Shutdown, TcpStream, UdpSocket};
use std::time::Duration;

use weirdpeer_core::digest::{hmac_sha256, sha256, TAG_LEN};
use weirdpeer_core::fault::CallTable;
use weirdpeer_core::frame::{self, header_length, FrameKind, RawFrame, HEADER_LEN, MAX_PAYLOAD, TRAILER_LEN};
use weirdpeer_core::transcript::{Direction, Transcript};

use super::DEFAULT_CAPACITY;
use super::{nonce, seal_post, site, Integrity, TestbedArgs, Transport, NONCE_LEN, REPLY_TIMEOUT_MS};
use crate::{peer, runtime};

/// Expected value of the client's configuration magic.
pub const CONFIG_MAGIC: u32 = 0x7443_6831;

/// Scripted DATA items: body and the length the application asks to send.
pub const DATA_ITEMS: [(&[u8], usize); 3] = [(b"ping", 4), (b"status report", 13), (b"x", 4096)];

pub const DUP_COUNT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptStep {
    Hello,
    Auth,
    Data,
    Dup,
    Bye,
}

impl ScriptStep {
    fn kind(self) -> FrameKind {
        match self {
            ScriptStep::Hello => FrameKind::Hello,
            ScriptStep::Auth => FrameKind::Auth,
            ScriptStep::Data => FrameKind::Data,
            ScriptStep::Dup => FrameKind::Dup,
            ScriptStep::Bye => FrameKind::Bye,
        }
    }
}

pub const SCRIPT: [ScriptStep; 7] = [
    ScriptStep::Hello,
    ScriptStep::Auth,
    ScriptStep::Data,
    ScriptStep::Data,
    ScriptStep::Data,
    ScriptStep::Dup,
    ScriptStep::Bye,
];

type DigestFn = fn(&[u8], &[&[u8]]) -> [u8; TAG_LEN];

fn keyed(key: &[u8], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    hmac_sha256(key, parts)
}

fn unkeyed(_key: &[u8], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    sha256(parts)
}

fn key_suffixed(key: &[u8], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    let mut all: Vec<&[u8]> = parts.to_vec();
    all.push(key);
    sha256(&all)
}

/// Same-signature digests the call site may be redirected to.
fn digest_table() -> CallTable<DigestFn> {
    CallTable::new(
        "digest(key,parts)->[u8;32]",
        vec![keyed as DigestFn, unkeyed, key_suffixed],
    )
    .expect("non-empty table")
}

/// Return value of a skipped digest call.
const DIGEST_DEFAULT: [u8; TAG_LEN] = [0; TAG_LEN];

enum Conn {
    Tcp(TcpStream),
    Udp(UdpSocket),
}

impl Conn {
    fn open(transport: Transport, port: u16) -> io::Result<Conn> {
        let timeout = Some(Duration::from_millis(REPLY_TIMEOUT_MS));
        match transport {
            Transport::Tcp => {
                let s = TcpStream::connect((Ipv4Addr::LOCALHOST, port))?;
                s.set_nodelay(true)?;
                s.set_read_timeout(timeout)?;
                Ok(Conn::Tcp(s))
            }
            Transport::Udp => {
                let s = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0))?;
                s.connect((Ipv4Addr::LOCALHOST, port))?;
                s.set_read_timeout(timeout)?;
                Ok(Conn::Udp(s))
            }
        }
    }

    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self {
            Conn::Tcp(s) => s.write_all(bytes),
            Conn::Udp(s) => s.send(bytes).map(|_| ()),
        }
    }

    /// Next frame's bytes; `None` on end of stream, error or timeout.
    fn recv(&mut self) -> Option<Vec<u8>> {
        match self {
            Conn::Tcp(s) => {
                let mut header = [0u8; HEADER_LEN];
                s.read_exact(&mut header).ok()?;
                let len = header_length(header);
                if len > MAX_PAYLOAD {
                    return None;
                }
                let mut buf = vec![0u8; HEADER_LEN + len + TRAILER_LEN];
                buf[..HEADER_LEN].copy_from_slice(&header);
                s.read_exact(&mut buf[HEADER_LEN..]).ok()?;
                Some(buf)
            }
            Conn::Udp(s) => {
                let mut buf = vec![0u8; HEADER_LEN + MAX_PAYLOAD + TRAILER_LEN];
                let n = s.recv(&mut buf).ok()?;
                buf.truncate(n);
                Some(buf)
            }
        }
    }

    fn finish_sending(&mut self) {
        if let Conn::Tcp(s) = self {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

struct Client {
    conn: Conn,
    integrity: Integrity,
    secret: Vec<u8>,
    digests: CallTable<DigestFn>,
    client_nonce: [u8; NONCE_LEN],
    server_nonce: Option<[u8; NONCE_LEN]>,
    session_key: Option<[u8; TAG_LEN]>,
    seq: u32,
    data_sent: usize,
    open: bool,
    sent_bye: bool,
    transcript: Transcript,
}

impl Client {
    fn digest(&self, key: &[u8], parts: &[&[u8]]) -> [u8; TAG_LEN] {
        match runtime::call(site::DIGEST, &self.digests) {
            Some(f) => f(key, parts),
            None => DIGEST_DEFAULT,
        }
    }

    fn send_frame(&mut self, kind: FrameKind, payload: &[u8]) {
        let Ok(bytes) = frame::encode(kind as u8, payload) else {
            self.open = false;
            return;
        };
        self.transcript.push(Direction::ClientToServer, &bytes);
        if self.conn.send(&bytes).is_err() {
            self.open = false;
        }
    }

    /// Reads replies until one of `kind` passes the checksum check.
    fn await_reply(&mut self, kind: FrameKind) -> Option<RawFrame> {
        loop {
            let bytes = self.conn.recv()?;
            self.transcript.push(Direction::ServerToClient, &bytes);
            let Ok((f, _)) = RawFrame::parse(&bytes) else { continue };
            let valid = !self.integrity.checks_crc() || f.crc_ok();
            if !runtime::branch(site::REPLY_CRC, valid) {
                continue;
            }
            if f.kind == kind as u8 {
                return Some(f);
            }
        }
    }

    fn send_post(&mut self, kind: FrameKind, body: &[u8]) {
        let seq = runtime::value(site::SEQ, u64::from(self.seq)) as u32;
        self.seq = self.seq.wrapping_add(1);
        let payload = if self.integrity.uses_mac() {
            let key = self.session_key.unwrap_or(DIGEST_DEFAULT);
            let mut payload = seal_post(None, kind as u8, seq, body);
            let tag = self.digest(&key, &[&[kind as u8], &payload]);
            payload.extend_from_slice(&tag[..super::FRAME_TAG_LEN]);
            payload
        } else {
            seal_post(None, kind as u8, seq, body)
        };
        self.send_frame(kind, &payload);
    }

    fn hello(&mut self) {
        let nonce = self.client_nonce;
        self.send_frame(FrameKind::Hello, &nonce);
        if !self.open {
            return;
        }
        let reply = self.await_reply(FrameKind::Challenge);
        let valid = reply.as_ref().is_some_and(|f| f.payload.len() == NONCE_LEN);
        if !runtime::branch(site::CHALLENGE_OK, valid) {
            self.open = false;
            return;
        }
        let mut sn = [0u8; NONCE_LEN];
        if let Some(f) = reply.filter(|f| f.payload.len() == NONCE_LEN) {
            sn.copy_from_slice(&f.payload);
        }
        self.server_nonce = Some(sn);
    }

    fn auth(&mut self) {
        let sn = self.server_nonce.unwrap_or_default();
        let key = if self.integrity.uses_mac() {
            self.digest(&self.secret.clone(), &[&self.client_nonce, &sn])
        } else {
            DIGEST_DEFAULT
        };
        self.session_key = Some(key);
        self.send_frame(FrameKind::Auth, &key);
        if !self.open {
            return;
        }
        let reply = self.await_reply(FrameKind::Auth);
        let accepted = reply.is_some_and(|f| f.payload == [1]);
        if !runtime::branch(site::AUTH_OK, accepted) {
            self.open = false;
        }
    }

    fn data(&mut self) {
        let (body, requested) = DATA_ITEMS[self.data_sent % DATA_ITEMS.len()];
        self.data_sent += 1;
        let mut bytes = body.to_vec();
        bytes[0] = runtime::value(site::DATA_BYTE, u64::from(bytes[0])) as u8;
        let mut declared = requested;
        if runtime::branch(site::CLAMP, requested > bytes.len()) {
            declared = bytes.len();
        }
        let declared = runtime::value(site::DECL_LEN, declared as u64) as u16;
        let mut app = declared.to_le_bytes().to_vec();
        app.extend_from_slice(&bytes);
        self.send_post(FrameKind::Data, &app);
    }

    fn dup(&mut self) {
        let capacity = runtime::value(site::DUP_CAP, DEFAULT_CAPACITY as u64) as u16;
        let count = runtime::value(site::DUP_COUNT, u64::from(DUP_COUNT)) as u8;
        let mut app = capacity.to_le_bytes().to_vec();
        app.push(count);
        self.send_post(FrameKind::Dup, &app);
    }

    fn challenge(&mut self) {
        let nonce = self.client_nonce;
        self.send_frame(FrameKind::Challenge, &nonce);
    }

    fn run_script(&mut self) {
        for step in SCRIPT {
            if !self.open {
                break;
            }
            if step == ScriptStep::Bye && !runtime::branch(site::SEND_BYE, true) {
                continue;
            }
            let idx = runtime::switch(site::FRAME_KIND, step.kind().ordinal(), FrameKind::ALL.len());
            match FrameKind::ALL[idx] {
                FrameKind::Hello => self.hello(),
                FrameKind::Challenge => self.challenge(),
                FrameKind::Auth => self.auth(),
                FrameKind::Data => self.data(),
                FrameKind::Dup => self.dup(),
                FrameKind::Bye => {
                    self.send_post(FrameKind::Bye, &[]);
                    self.sent_bye = true;
                }
            }
        }
    }

    /// TCP: half-close and read until the server hangs up. UDP: wait for
    /// the BYE reply, if a BYE went out.
    fn drain(&mut self) {
        self.conn.finish_sending();
        match self.conn {
            Conn::Tcp(_) => {
                while let Some(bytes) = self.conn.recv() {
                    self.transcript.push(Direction::ServerToClient, &bytes);
                }
            }
            Conn::Udp(_) => {
                if !self.sent_bye || !self.open {
                    return;
                }
                while let Some(bytes) = self.conn.recv() {
                    self.transcript.push(Direction::ServerToClient, &bytes);
                    if bytes.get(2) == Some(&(FrameKind::Bye as u8)) {
                        break;
                    }
                }
            }
        }
    }
}

/// Process entry point; returns the exit status.
pub fn client_main(args: &TestbedArgs) -> i32 {
    if let Err(e) = runtime::init(site::all()) {
        eprintln!("tinychat-client: {e}");
        return 2;
    }
    peer::connect_from_env();
    let code = run(args);
    runtime::finish();
    code
}

fn run(args: &TestbedArgs) -> i32 {
    let magic = runtime::value(site::CFG_MAGIC, u64::from(CONFIG_MAGIC)) as u32;
    if magic != CONFIG_MAGIC {
        runtime::abort_with("configuration magic mismatch");
    }
    if !runtime::branch(site::CFG_CHECK, args.port != 0) {
        runtime::abort_with("configuration rejected");
    }
    let base = nonce(args.seed, "client");
    let mut client_nonce = [0u8; NONCE_LEN];
    for (i, half) in base.chunks(8).enumerate() {
        let word = u64::from_le_bytes(half.try_into().expect("8-byte chunk"));
        let word = runtime::value(site::NONCE, word);
        client_nonce[i * 8..i * 8 + 8].copy_from_slice(&word.to_le_bytes());
    }

    peer::connecting();
    let conn = match Conn::open(args.transport, args.port) {
        Ok(c) => c,
        Err(e) => {
            peer::peer_error(&e.to_string());
            eprintln!("tinychat-client: connect: {e}");
            return 1;
        }
    };
    peer::connected();

    let mut client = Client {
        conn,
        integrity: args.integrity,
        secret: args.secret.0.clone(),
        digests: digest_table(),
        client_nonce,
        server_nonce: None,
        session_key: None,
        seq: 0,
        data_sent: 0,
        open: true,
        sent_bye: false,
        transcript: Transcript {
            records: Vec::new(),
            origin_seed: args.seed,
        },
    };
    client.run_script();
    client.drain();
    if let Some(path) = &args.transcript {
        if let Err(e) = std::fs::write(path, client.transcript.encode()) {
            eprintln!("tinychat-client: transcript: {e}");
            return 1;
        }
    }
    0
}
