//! TinyChat: a deterministic toy client/server pair.
//!
//! The session is `HELLO(client nonce) -> CHALLENGE(server nonce) ->
//! AUTH(tag)`, after which the client sends a scripted run of DATA and DUP
//! frames and a BYE. Every frame carries a CRC-32; with `crc+hmac` the AUTH
//! tag must equal the keyed digest of both nonces under the shared secret,
//! and post-handshake frames carry a sequence number and a truncated MAC
//! under that session key.
//!
//! The client is instrumented with fault sites and acts as the weird peer;
//! the server is instrumented for coverage and carries three seeded bugs,
//! each guarded by an arming flag.

pub mod client;
pub mod oracle;
pub mod server;

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use weirdpeer_core::coverage::edge_index;
use weirdpeer_core::digest::{hmac_sha256, sha256, TAG_LEN};
use weirdpeer_core::{FaultProgram, ProgramEntry, SiteDescriptor};

pub const NONCE_LEN: usize = 16;
/// Truncated per-frame MAC length.
pub const FRAME_TAG_LEN: usize = 16;
pub const SEQ_LEN: usize = 4;
pub const DEFAULT_SECRET: &str = "7765697264706565722d74696e79636861742d7368617265642d736563726574";
/// Dup-table capacity before any DUP frame changes it.
pub const DEFAULT_CAPACITY: usize = 8;
pub const MAX_CAPACITY: u16 = 64;
/// How long the client waits for any single reply.
pub const REPLY_TIMEOUT_MS: u64 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Integrity {
    None,
    Crc,
    #[value(name = "crc+hmac")]
    CrcHmac,
}

impl Integrity {
    pub fn checks_crc(self) -> bool {
        self != Integrity::None
    }

    pub fn uses_mac(self) -> bool {
        self == Integrity::CrcHmac
    }

    pub fn tag_len(self) -> usize {
        if self.uses_mac() {
            FRAME_TAG_LEN
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, ValueEnum)]
pub enum Bug {
    /// DATA whose declared length exceeds its payload is copied anyway.
    #[value(name = "B1_len_copy", alias = "B1")]
    B1LenCopy,
    /// DUP checks the count against the capacity instead of the free room.
    #[value(name = "B2_dup_overflow", alias = "B2")]
    B2DupOverflow,
    /// DATA after BYE is authenticated with the discarded session key.
    #[value(name = "B3_use_after_close", alias = "B3")]
    B3UseAfterClose,
}

impl Bug {
    pub const ALL: [Bug; 3] = [Bug::B1LenCopy, Bug::B2DupOverflow, Bug::B3UseAfterClose];

    pub fn id(self) -> &'static str {
        match self {
            Bug::B1LenCopy => "B1_len_copy",
            Bug::B2DupOverflow => "B2_dup_overflow",
            Bug::B3UseAfterClose => "B3_use_after_close",
        }
    }

    pub fn from_id(id: &str) -> Option<Bug> {
        Bug::ALL.into_iter().find(|b| b.id() == id)
    }
}

/// Command line shared by both testbed peers.
#[derive(Debug, Clone, Parser)]
pub struct TestbedArgs {
    #[arg(long, value_enum, default_value = "tcp")]
    pub transport: Transport,
    #[arg(long, value_enum, default_value = "crc+hmac")]
    pub integrity: Integrity,
    /// Bugs to arm (server only).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub arm: Vec<Bug>,
    #[arg(long)]
    pub port: u16,
    /// Derive nonces from this seed; fresh random nonces otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shared secret, hex.
    #[arg(long, default_value = DEFAULT_SECRET, value_parser = parse_secret)]
    pub secret: Secret,
    /// Write the frames of the session here (client only).
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Serve sessions until killed instead of exiting after one (server only).
    #[arg(long = "loop")]
    pub loop_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Secret(pub Vec<u8>);

fn parse_secret(s: &str) -> Result<Secret, String> {
    hex::decode(s)
        .map(Secret)
        .map_err(|e| format!("secret is not hex: {e}"))
}

impl TestbedArgs {
    pub fn armed(&self) -> BTreeSet<Bug> {
        self.arm.iter().copied().collect()
    }
}

/// Seeded nonces are a digest of the seed and the peer's role; unseeded
/// ones come from the OS generator.
pub fn nonce(seed: Option<u64>, role: &str) -> [u8; NONCE_LEN] {
    match seed {
        Some(seed) => {
            let d = sha256(&[b"tinychat-nonce", role.as_bytes(), &seed.to_le_bytes()]);
            let mut out = [0u8; NONCE_LEN];
            out.copy_from_slice(&d[..NONCE_LEN]);
            out
        }
        None => rand::random(),
    }
}

/// Session key; also the AUTH tag the server expects.
pub fn session_key(secret: &[u8], client_nonce: &[u8], server_nonce: &[u8]) -> [u8; TAG_LEN] {
    hmac_sha256(secret, &[client_nonce, server_nonce])
}

pub fn frame_tag(key: &[u8], kind: u8, body: &[u8]) -> [u8; FRAME_TAG_LEN] {
    let d = hmac_sha256(key, &[&[kind], body]);
    let mut out = [0u8; FRAME_TAG_LEN];
    out.copy_from_slice(&d[..FRAME_TAG_LEN]);
    out
}

/// Post-handshake payload: `seq u32 LE, body, tag`.
pub fn seal_post(key: Option<&[u8]>, kind: u8, seq: u32, body: &[u8]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(SEQ_LEN + body.len() + FRAME_TAG_LEN);
    payload.extend_from_slice(&seq.to_le_bytes());
    payload.extend_from_slice(body);
    if let Some(key) = key {
        let tag = frame_tag(key, kind, &payload);
        payload.extend_from_slice(&tag);
    }
    payload
}

/// Fault sites of the TinyChat client.
pub mod site {
    use super::*;

    pub const CFG_MAGIC: u32 = 1;
    pub const CFG_CHECK: u32 = 2;
    pub const NONCE: u32 = 3;
    pub const FRAME_KIND: u32 = 4;
    pub const DIGEST: u32 = 5;
    pub const CHALLENGE_OK: u32 = 6;
    pub const AUTH_OK: u32 = 7;
    pub const CLAMP: u32 = 8;
    pub const DECL_LEN: u32 = 9;
    pub const DATA_BYTE: u32 = 10;
    pub const SEQ: u32 = 11;
    pub const DUP_CAP: u32 = 12;
    pub const DUP_COUNT: u32 = 13;
    pub const SEND_BYE: u32 = 14;
    pub const REPLY_CRC: u32 = 15;

    pub fn all() -> Vec<SiteDescriptor> {
        let v = |id, w, label| SiteDescriptor::value_store(id, w, label).expect("valid width");
        vec![
            SiteDescriptor::value_load(CFG_MAGIC, 32, "config magic").expect("valid width"),
            SiteDescriptor::branch(CFG_CHECK, "config port check"),
            v(NONCE, 64, "client nonce word"),
            SiteDescriptor::switch(FRAME_KIND, "scripted frame kind"),
            SiteDescriptor::call_entry(DIGEST, "digest(key,parts)->[u8;32]", "keyed digest"),
            SiteDescriptor::branch(CHALLENGE_OK, "challenge frame valid"),
            SiteDescriptor::branch(AUTH_OK, "auth accepted"),
            SiteDescriptor::branch(CLAMP, "clamp declared length"),
            v(DECL_LEN, 16, "declared data length"),
            v(DATA_BYTE, 8, "first data byte"),
            v(SEQ, 32, "frame sequence number"),
            v(DUP_CAP, 16, "dup capacity"),
            v(DUP_COUNT, 8, "dup count"),
            SiteDescriptor::branch(SEND_BYE, "send bye"),
            SiteDescriptor::branch(REPLY_CRC, "reply checksum valid"),
        ]
    }
}

/// Coverage locations of the TinyChat server.
pub mod loc {
    pub const START: u32 = 0x5a01;
    pub const SESSION: u32 = 0x5a02;
    pub const FRAME: u32 = 0x5a03;
    pub const OVERSIZE: u32 = 0x5a04;
    pub const CRC_BAD: u32 = 0x5a05;
    pub const KIND_UNKNOWN: u32 = 0x5a06;
    pub const DGRAM_MALFORMED: u32 = 0x5a07;
    pub const AWAIT_HELLO: u32 = 0x5a10;
    pub const HELLO_VIOLATION: u32 = 0x5a11;
    pub const HELLO_BADLEN: u32 = 0x5a12;
    pub const CHALLENGE_TX: u32 = 0x5a13;
    pub const AWAIT_AUTH: u32 = 0x5a14;
    pub const AUTH_VIOLATION: u32 = 0x5a15;
    pub const AUTH_BADLEN: u32 = 0x5a16;
    pub const AUTH_BAD: u32 = 0x5a17;
    pub const AUTH_OK: u32 = 0x5a18;
    pub const AUTH_UNCHECKED: u32 = 0x5a19;
    pub const EOF_HANDSHAKE: u32 = 0x5a1a;

    pub const ESTABLISHED: u32 = 0x5b01;
    pub const EST_VIOLATION: u32 = 0x5b02;
    pub const POST_SHORT: u32 = 0x5b03;
    pub const MAC_BAD: u32 = 0x5b04;
    pub const MAC_OK: u32 = 0x5b05;
    pub const SEQ_BAD: u32 = 0x5b06;
    pub const SEQ_OK: u32 = 0x5b07;
    pub const DATA: u32 = 0x5b10;
    pub const DATA_SHORT: u32 = 0x5b11;
    pub const DECL_LONG: u32 = 0x5b12;
    pub const DECL_ZERO: u32 = 0x5b13;
    pub const DECL_SHORT: u32 = 0x5b14;
    pub const DECL_EXACT: u32 = 0x5b15;
    pub const CMD: u32 = 0x5b16;
    pub const CMD_STAT: u32 = 0x5b17;
    pub const CMD_OTHER: u32 = 0x5b18;
    pub const TABLE_PUSH: u32 = 0x5b19;
    pub const TABLE_FULL: u32 = 0x5b1a;
    pub const DUP: u32 = 0x5b20;
    pub const DUP_MALFORMED: u32 = 0x5b21;
    pub const CAP_BIG: u32 = 0x5b22;
    pub const CAP_ZERO: u32 = 0x5b23;
    pub const CAP_SHRINK: u32 = 0x5b24;
    pub const DUP_EMPTY: u32 = 0x5b25;
    pub const DUP_REJECT: u32 = 0x5b26;
    pub const DUP_ZERO: u32 = 0x5b27;
    pub const DUP_OK: u32 = 0x5b28;
    pub const BYE: u32 = 0x5b30;
    pub const CLOSED: u32 = 0x5b31;
    pub const CLOSED_DATA: u32 = 0x5b32;
    pub const CLOSED_OTHER: u32 = 0x5b33;
    pub const EOF_ESTABLISHED: u32 = 0x5b34;
    pub const EOF_CLOSED: u32 = 0x5b35;

    /// Reachable before (or without) a successful handshake.
    pub const PRE: &[u32] = &[
        START,
        SESSION,
        FRAME,
        OVERSIZE,
        CRC_BAD,
        KIND_UNKNOWN,
        DGRAM_MALFORMED,
        AWAIT_HELLO,
        HELLO_VIOLATION,
        HELLO_BADLEN,
        CHALLENGE_TX,
        AWAIT_AUTH,
        AUTH_VIOLATION,
        AUTH_BADLEN,
        AUTH_BAD,
        AUTH_OK,
        AUTH_UNCHECKED,
        EOF_HANDSHAKE,
    ];

    /// Only reachable once the session is established.
    pub const POST: &[u32] = &[
        ESTABLISHED,
        EST_VIOLATION,
        POST_SHORT,
        MAC_BAD,
        MAC_OK,
        SEQ_BAD,
        SEQ_OK,
        DATA,
        DATA_SHORT,
        DECL_LONG,
        DECL_ZERO,
        DECL_SHORT,
        DECL_EXACT,
        CMD,
        CMD_STAT,
        CMD_OTHER,
        TABLE_PUSH,
        TABLE_FULL,
        DUP,
        DUP_MALFORMED,
        CAP_BIG,
        CAP_ZERO,
        CAP_SHRINK,
        DUP_EMPTY,
        DUP_REJECT,
        DUP_ZERO,
        DUP_OK,
        BYE,
        CLOSED,
        CLOSED_DATA,
        CLOSED_OTHER,
        EOF_ESTABLISHED,
        EOF_CLOSED,
    ];
}

/// Map cells that only edges into post-handshake locations can touch.
/// Cells shared with any edge into a handshake-phase location are left out,
/// so a hit on one of these cells proves the handshake was passed.
pub fn post_handshake_cells(map_size: usize) -> BTreeSet<u32> {
    let prevs: Vec<u32> = std::iter::once(0)
        .chain(loc::PRE.iter().copied())
        .chain(loc::POST.iter().copied())
        .collect();
    let cells = |targets: &[u32]| -> BTreeSet<u32> {
        prevs
            .iter()
            .flat_map(|&p| targets.iter().map(move |&c| edge_index(p, c, map_size) as u32))
            .collect()
    };
    let pre = cells(loc::PRE);
    cells(loc::POST).difference(&pre).copied().collect()
}

/// Hand-built fault program that makes the unmodified client trigger `bug`
/// on an armed server. B1 un-clamps the third DATA frame's declared length;
/// B2 shrinks the DUP capacity from 8 to 4 while three entries are stored.
pub fn witness(bug: Bug) -> Option<FaultProgram> {
    let entry = match bug {
        Bug::B1LenCopy => ProgramEntry::new(site::CLAMP, vec![0x04]),
        Bug::B2DupOverflow => ProgramEntry::new(site::DUP_CAP, vec![0x0C, 0x00]),
        Bug::B3UseAfterClose => return None,
    };
    Some(FaultProgram::from_entries(vec![entry]))
}
