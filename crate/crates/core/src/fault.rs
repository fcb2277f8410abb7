//! Fault sites, fault streams and the fault engine linked into a weird peer.
//!
//! A fault site consumes bits from its own stream every time it executes.
//! Streams are read least-significant bit first within each byte, bytes in
//! order. A stream that cannot supply a full word is exhausted and from then
//! on every application at that site is the identity fault.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::program::FaultProgram;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FaultError {
    #[error("site {0} is already registered")]
    DuplicateSite(u32),
    #[error("site registry is sealed")]
    Sealed,
    #[error("site {site}: invalid width {width} for {kind}")]
    InvalidWidth { site: u32, kind: SiteKind, width: u8 },
    #[error("site {0} is not registered")]
    UnknownSite(u32),
    #[error("site {site} is a {actual} site, expected {expected}")]
    KindMismatch {
        site: u32,
        expected: &'static str,
        actual: SiteKind,
    },
    #[error("call table must not be empty")]
    EmptyCallTable,
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    ValueLoad,
    ValueStore,
    Branch,
    Switch,
    CallEntry,
}

impl SiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::ValueLoad => "ValueLoad",
            SiteKind::ValueStore => "ValueStore",
            SiteKind::Branch => "Branch",
            SiteKind::Switch => "Switch",
            SiteKind::CallEntry => "CallEntry",
        }
    }

    pub fn is_value(self) -> bool {
        matches!(self, SiteKind::ValueLoad | SiteKind::ValueStore)
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SiteKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "ValueLoad" => SiteKind::ValueLoad,
            "ValueStore" => SiteKind::ValueStore,
            "Branch" => SiteKind::Branch,
            "Switch" => SiteKind::Switch,
            "CallEntry" => SiteKind::CallEntry,
            _ => return Err(()),
        })
    }
}

/// One instrumentable program location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteDescriptor {
    pub site_id: u32,
    pub kind: SiteKind,
    /// Bits consumed per execution.
    pub width_bits: u8,
    pub label: String,
    /// Signature group of the callee, only meaningful for call sites.
    pub arity_class: Option<String>,
}

impl SiteDescriptor {
    pub fn new(site_id: u32, kind: SiteKind, width_bits: u8, label: impl Into<String>) -> Result<Self, FaultError> {
        let valid = match kind {
            SiteKind::Branch => width_bits == 1,
            SiteKind::Switch | SiteKind::CallEntry => width_bits == 8,
            SiteKind::ValueLoad | SiteKind::ValueStore => matches!(width_bits, 8 | 16 | 32 | 64),
        };
        if !valid {
            return Err(FaultError::InvalidWidth {
                site: site_id,
                kind,
                width: width_bits,
            });
        }
        Ok(Self {
            site_id,
            kind,
            width_bits,
            label: label.into(),
            arity_class: None,
        })
    }

    pub fn branch(site_id: u32, label: impl Into<String>) -> Self {
        Self::new(site_id, SiteKind::Branch, 1, label).expect("branch width is fixed")
    }

    pub fn switch(site_id: u32, label: impl Into<String>) -> Self {
        Self::new(site_id, SiteKind::Switch, 8, label).expect("switch width is fixed")
    }

    pub fn value_load(site_id: u32, width_bits: u8, label: impl Into<String>) -> Result<Self, FaultError> {
        Self::new(site_id, SiteKind::ValueLoad, width_bits, label)
    }

    pub fn value_store(site_id: u32, width_bits: u8, label: impl Into<String>) -> Result<Self, FaultError> {
        Self::new(site_id, SiteKind::ValueStore, width_bits, label)
    }

    pub fn call_entry(site_id: u32, arity_class: impl Into<String>, label: impl Into<String>) -> Self {
        let mut d = Self::new(site_id, SiteKind::CallEntry, 8, label).expect("call width is fixed");
        d.arity_class = Some(arity_class.into());
        d
    }

    /// `site_id<TAB>kind<TAB>width_bits<TAB>label`
    pub fn manifest_line(&self) -> String {
        let mut s = String::new();
        let _ = fmt::write(
            &mut s,
            format_args!("{}\t{}\t{}\t{}", self.site_id, self.kind, self.width_bits, self.label),
        );
        s
    }
}

/// Renders a site manifest, one line per site, ordered by site id.
pub fn render_manifest<'a>(sites: impl IntoIterator<Item = &'a SiteDescriptor>) -> String {
    let mut out = String::new();
    for site in sites {
        out.push_str(&site.manifest_line());
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<SiteDescriptor>, FaultError> {
    let mut sites = Vec::new();
    let mut seen = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.splitn(4, '\t');
        let bad = |reason| FaultError::Manifest { line, reason };
        let site_id: u32 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad site id"))?;
        let kind: SiteKind = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad kind"))?;
        let width: u8 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad width"))?;
        let label = fields.next().unwrap_or("");
        let desc = SiteDescriptor::new(site_id, kind, width, label).map_err(|_| bad("invalid width"))?;
        if seen.insert(site_id, ()).is_some() {
            return Err(bad("duplicate site id"));
        }
        sites.push(desc);
    }
    Ok(sites)
}

/// Registered sites of a weird peer, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    sites: BTreeMap<u32, SiteDescriptor>,
}

impl Manifest {
    pub fn from_sites(sites: impl IntoIterator<Item = SiteDescriptor>) -> Self {
        Self {
            sites: sites.into_iter().map(|s| (s.site_id, s)).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, FaultError> {
        parse_manifest(text).map(Self::from_sites)
    }

    pub fn get(&self, site_id: u32) -> Option<&SiteDescriptor> {
        self.sites.get(&site_id)
    }

    pub fn width(&self, site_id: u32) -> Option<u8> {
        self.sites.get(&site_id).map(|s| s.width_bits)
    }

    pub fn contains(&self, site_id: u32) -> bool {
        self.sites.contains_key(&site_id)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Sites in id order.
    pub fn iter(&self) -> impl Iterator<Item = &SiteDescriptor> {
        self.sites.values()
    }

    pub fn render(&self) -> String {
        render_manifest(self.sites.values())
    }
}

/// Per-site bit stream with a runtime cursor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultStream {
    bits: Vec<u8>,
    cursor: usize,
    exhausted: bool,
}

impl FaultStream {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            bits: bytes.into(),
            cursor: 0,
            exhausted: false,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn remaining_bits(&self) -> usize {
        self.bits.len() * 8 - self.cursor
    }

    /// Returns the next `n_bits` bits (low bits significant) and advances the
    /// cursor. Yields 0 and marks the stream exhausted when fewer remain.
    pub fn consume(&mut self, n_bits: u32) -> u64 {
        debug_assert!(matches!(n_bits, 1 | 8 | 16 | 32 | 64));
        let n = n_bits as usize;
        if self.exhausted || self.remaining_bits() < n {
            self.exhausted = true;
            return 0;
        }
        let word = if self.cursor.is_multiple_of(8) && n.is_multiple_of(8) {
            let start = self.cursor / 8;
            self.bits[start..start + n / 8]
                .iter()
                .rev()
                .fold(0u64, |acc, &b| (acc << 8) | u64::from(b))
        } else {
            (0..n).fold(0u64, |acc, k| {
                let bit = self.cursor + k;
                let b = (self.bits[bit / 8] >> (bit % 8)) & 1;
                acc | (u64::from(b) << k)
            })
        };
        self.cursor += n;
        word
    }
}

/// Functions sharing one signature; index 0 is the original callee.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallTable<T> {
    pub arity_class: String,
    entries: Vec<T>,
}

impl<T> CallTable<T> {
    pub fn new(arity_class: impl Into<String>, entries: Vec<T>) -> Result<Self, FaultError> {
        if entries.is_empty() {
            return Err(FaultError::EmptyCallTable);
        }
        Ok(Self {
            arity_class: arity_class.into(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.entries.get(index)
    }

    pub fn original(&self) -> &T {
        &self.entries[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallAction {
    CallEntryAt(usize),
    SkipCall,
}

fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// XOR fault on a value of `width` bits.
pub fn value_fault(original: u64, fault_bits: u64, width: u32) -> u64 {
    (original ^ fault_bits) & width_mask(width)
}

pub fn branch_fault(condition: bool, fault_bit: u64) -> bool {
    condition ^ (fault_bit & 1 == 1)
}

/// A zero byte keeps the original arm; otherwise the arm advances by the
/// byte value modulo the number of arms (the default arm counts as one).
pub fn switch_fault(original_index: usize, case_count: usize, fault_byte: u64) -> usize {
    debug_assert!(case_count >= 1 && original_index < case_count);
    if fault_byte == 0 {
        original_index
    } else {
        (original_index + fault_byte as usize) % case_count
    }
}

/// A zero byte keeps the original callee; otherwise `byte mod (len + 1)`
/// selects a table entry, with `len` meaning the call is skipped.
pub fn call_fault(table_len: usize, fault_byte: u64) -> CallAction {
    debug_assert!(table_len >= 1);
    if fault_byte == 0 {
        return CallAction::CallEntryAt(0);
    }
    let r = fault_byte as usize % (table_len + 1);
    if r == table_len {
        CallAction::SkipCall
    } else {
        CallAction::CallEntryAt(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Sites are transparent and nothing is counted.
    #[default]
    Off,
    /// Sites are transparent and hits are counted.
    Counting,
    /// Faults are applied from loaded streams and hits are counted.
    Faulting,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Off => "off",
            Mode::Counting => "counting",
            Mode::Faulting => "faulting",
        }
    }
}

impl FromStr for Mode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "off" => Ok(Mode::Off),
            "counting" => Ok(Mode::Counting),
            "faulting" => Ok(Mode::Faulting),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteHandle(u32);

impl SiteHandle {
    pub fn id(self) -> u32 {
        self.0
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct SiteCounters {
    hits: u64,
    consumed_bits: u64,
}

/// Registry, streams and counters of one weird-peer process.
#[derive(Debug, Default)]
pub struct FaultEngine {
    sites: BTreeMap<u32, SiteDescriptor>,
    streams: BTreeMap<u32, FaultStream>,
    counters: BTreeMap<u32, SiteCounters>,
    sealed: bool,
    mode: Mode,
}

impl FaultEngine {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn register_site(&mut self, descriptor: SiteDescriptor) -> Result<SiteHandle, FaultError> {
        if self.sealed {
            return Err(FaultError::Sealed);
        }
        let id = descriptor.site_id;
        if self.sites.contains_key(&id) {
            return Err(FaultError::DuplicateSite(id));
        }
        self.sites.insert(id, descriptor);
        Ok(SiteHandle(id))
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn handle(&self, site_id: u32) -> Option<SiteHandle> {
        self.sites.contains_key(&site_id).then_some(SiteHandle(site_id))
    }

    pub fn site(&self, handle: SiteHandle) -> &SiteDescriptor {
        &self.sites[&handle.0]
    }

    pub fn sites(&self) -> impl Iterator<Item = &SiteDescriptor> {
        self.sites.values()
    }

    pub fn manifest(&self) -> String {
        render_manifest(self.sites.values())
    }

    /// Installs the streams of `program`. Entries for unregistered sites are
    /// ignored and returned so the caller can report them.
    pub fn load_program(&mut self, program: &FaultProgram) -> Vec<u32> {
        self.streams.clear();
        let mut unknown = Vec::new();
        for entry in &program.entries {
            if self.sites.contains_key(&entry.site_id) {
                self.streams
                    .insert(entry.site_id, FaultStream::new(entry.stream.clone()));
            } else {
                unknown.push(entry.site_id);
            }
        }
        unknown
    }

    pub fn stream(&self, site_id: u32) -> Option<&FaultStream> {
        self.streams.get(&site_id)
    }

    fn next_bits(&mut self, handle: SiteHandle, width: u32) -> u64 {
        if self.mode == Mode::Off {
            return 0;
        }
        let counters = self.counters.entry(handle.0).or_default();
        counters.hits += 1;
        if self.mode != Mode::Faulting {
            return 0;
        }
        match self.streams.get_mut(&handle.0) {
            Some(stream) => {
                let was_exhausted = stream.is_exhausted();
                let bits = stream.consume(width);
                if !was_exhausted && !stream.is_exhausted() {
                    counters.consumed_bits += u64::from(width);
                }
                bits
            }
            None => 0,
        }
    }

    fn expect_kind(
        &self,
        handle: SiteHandle,
        expected: &'static str,
        ok: impl Fn(SiteKind) -> bool,
    ) -> &SiteDescriptor {
        let site = &self.sites[&handle.0];
        debug_assert!(
            ok(site.kind),
            "site {} is {}, expected {expected}",
            site.site_id,
            site.kind
        );
        site
    }

    pub fn apply_value(&mut self, handle: SiteHandle, original: u64) -> u64 {
        let width = u32::from(self.expect_kind(handle, "value", SiteKind::is_value).width_bits);
        let bits = self.next_bits(handle, width);
        value_fault(original, bits, width)
    }

    pub fn apply_branch(&mut self, handle: SiteHandle, condition: bool) -> bool {
        self.expect_kind(handle, "branch", |k| k == SiteKind::Branch);
        let bit = self.next_bits(handle, 1);
        branch_fault(condition, bit)
    }

    pub fn apply_switch(&mut self, handle: SiteHandle, original_index: usize, case_count: usize) -> usize {
        self.expect_kind(handle, "switch", |k| k == SiteKind::Switch);
        let byte = self.next_bits(handle, 8);
        switch_fault(original_index, case_count, byte)
    }

    pub fn apply_call(&mut self, handle: SiteHandle, table_len: usize) -> CallAction {
        self.expect_kind(handle, "call", |k| k == SiteKind::CallEntry);
        let byte = self.next_bits(handle, 8);
        call_fault(table_len, byte)
    }

    /// Per-site execution counts of the current run.
    pub fn record_hits(&self) -> BTreeMap<u32, u64> {
        self.counters
            .iter()
            .filter(|(_, c)| c.hits > 0)
            .map(|(&id, c)| (id, c.hits))
            .collect()
    }

    pub fn hits(&self, site_id: u32) -> u64 {
        self.counters.get(&site_id).map_or(0, |c| c.hits)
    }

    pub fn consumed_bits(&self, site_id: u32) -> u64 {
        self.counters.get(&site_id).map_or(0, |c| c.consumed_bits)
    }
}

/// `site_id<TAB>hits` lines, ordered by site id.
pub fn render_hits(hits: &BTreeMap<u32, u64>) -> String {
    let mut out = String::new();
    for (id, n) in hits {
        out.push_str(&id.to_string());
        out.push('\t');
        out.push_str(&n.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_hits(text: &str) -> Option<BTreeMap<u32, u64>> {
    let mut hits = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (id, n) = line.split_once('\t')?;
        hits.insert(id.trim().parse().ok()?, n.trim().parse().ok()?);
    }
    Some(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::ProgramEntry;
    use alloc::vec;

    #[test]
    fn consume_single_bit_is_lsb_first() {
        let mut s = FaultStream::new(vec![0b0000_0001]);
        assert_eq!(s.consume(1), 1);
        assert_eq!(s.consume(1), 0);
    }

    #[test]
    fn consume_empty_stream_is_identity() {
        let mut s = FaultStream::new(Vec::new());
        assert_eq!(s.consume(8), 0);
        assert!(s.is_exhausted());
    }

    #[test]
    fn byte_aligned_reads_equal_raw_bytes() {
        let bytes = [0xAB, 0xCD];
        let mut s = FaultStream::new(bytes.to_vec());
        assert_eq!(s.consume(8), u64::from(bytes[0]));
        assert_eq!(s.consume(8), u64::from(bytes[1]));
        assert_eq!(s.consume(8), 0);
        assert!(s.is_exhausted());
    }

    #[test]
    fn unaligned_wide_read_matches_bit_trace() {
        let mut s = FaultStream::new(vec![0xFF, 0x00, 0x01]);
        assert_eq!(s.consume(1), 1);
        // bits 1..17: seven ones, eight zeros, then bit 16 = 1
        let word = s.consume(16);
        assert_eq!(word, 0x7F | (1 << 15));
    }

    #[test]
    fn short_remainder_exhausts_and_stays_exhausted() {
        let mut s = FaultStream::new(vec![0xFF]);
        assert_eq!(s.consume(16), 0);
        assert!(s.is_exhausted());
        assert_eq!(s.consume(1), 0);
        assert_eq!(s.cursor(), 0);
    }

    #[test]
    fn site_widths_are_validated() {
        assert!(SiteDescriptor::new(1, SiteKind::Branch, 8, "b").is_err());
        assert!(SiteDescriptor::new(1, SiteKind::Switch, 16, "s").is_err());
        assert!(SiteDescriptor::new(1, SiteKind::ValueLoad, 12, "v").is_err());
        assert!(SiteDescriptor::new(1, SiteKind::ValueStore, 64, "v").is_ok());
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut engine = FaultEngine::new(Mode::Faulting);
        let h = engine.register_site(SiteDescriptor::branch(1, "a.rs:1")).unwrap();
        assert_eq!(h.id(), 1);
        assert!(engine.manifest().starts_with("1\tBranch\t1\ta.rs:1"));
        assert_eq!(
            engine.register_site(SiteDescriptor::branch(1, "a.rs:2")),
            Err(FaultError::DuplicateSite(1))
        );
    }

    #[test]
    fn registration_after_seal_fails() {
        let mut engine = FaultEngine::new(Mode::Off);
        engine.seal();
        assert_eq!(
            engine.register_site(SiteDescriptor::branch(2, "x")),
            Err(FaultError::Sealed)
        );
    }

    #[test]
    fn manifest_round_trips() {
        let mut engine = FaultEngine::new(Mode::Off);
        engine.register_site(SiteDescriptor::branch(3, "c.rs:9")).unwrap();
        engine
            .register_site(SiteDescriptor::value_store(1, 64, "c.rs:1").unwrap())
            .unwrap();
        engine.register_site(SiteDescriptor::switch(2, "c.rs:4")).unwrap();
        engine.seal();
        let text = engine.manifest();
        assert_eq!(text.lines().count(), 3);
        let parsed = parse_manifest(&text).unwrap();
        assert_eq!(parsed.iter().map(|s| s.site_id).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(parsed[0].width_bits, 64);
    }

    #[test]
    fn value_fault_examples() {
        assert_eq!(value_fault(0xAB, 0x00, 8), 0xAB);
        assert_eq!(value_fault(0xAB, 0xFF, 8), 0x54);
    }

    #[test]
    fn wide_value_fault_consumes_eight_bytes() {
        let mut engine = FaultEngine::new(Mode::Faulting);
        let h = engine
            .register_site(SiteDescriptor::value_store(9, 64, "v").unwrap())
            .unwrap();
        engine.seal();
        let program = FaultProgram::from_entries(vec![ProgramEntry::new(9, vec![1u8; 12])]);
        engine.load_program(&program);
        let out = engine.apply_value(h, 0);
        assert_eq!(out, 0x0101_0101_0101_0101);
        assert_eq!(engine.stream(9).unwrap().cursor(), 64);
        assert_eq!(engine.consumed_bits(9), 64);
    }

    #[test]
    fn branch_flips_follow_bit_trace() {
        let mut engine = FaultEngine::new(Mode::Faulting);
        let h = engine.register_site(SiteDescriptor::branch(4, "b")).unwrap();
        engine.seal();
        engine.load_program(&FaultProgram::from_entries(vec![ProgramEntry::new(4, vec![0b101])]));
        let flips: Vec<bool> = (0..5).map(|_| !engine.apply_branch(h, true)).collect();
        assert_eq!(flips, [true, false, true, false, false]);
    }

    #[test]
    fn switch_and_call_examples() {
        assert_eq!(switch_fault(2, 4, 0), 2);
        assert_eq!(switch_fault(1, 3, 7), 2);
        assert_eq!(switch_fault(0, 1, 200), 0);
        assert_eq!(call_fault(4, 0), CallAction::CallEntryAt(0));
        assert_eq!(call_fault(4, 5), CallAction::CallEntryAt(0));
        assert_eq!(call_fault(4, 4), CallAction::SkipCall);
    }

    #[test]
    fn counting_mode_counts_without_faulting() {
        let mut engine = FaultEngine::new(Mode::Counting);
        let h = engine.register_site(SiteDescriptor::branch(7, "loop")).unwrap();
        engine.seal();
        engine.load_program(&FaultProgram::from_entries(vec![ProgramEntry::new(7, vec![0xFF])]));
        for _ in 0..3 {
            assert!(engine.apply_branch(h, true));
        }
        assert_eq!(engine.record_hits().get(&7), Some(&3));
        assert_eq!(engine.hits(99), 0);
    }

    #[test]
    fn off_mode_is_transparent() {
        let mut engine = FaultEngine::new(Mode::Off);
        let h = engine
            .register_site(SiteDescriptor::value_load(1, 8, "v").unwrap())
            .unwrap();
        engine.seal();
        engine.load_program(&FaultProgram::from_entries(vec![ProgramEntry::new(1, vec![0xFF])]));
        assert_eq!(engine.apply_value(h, 0x12), 0x12);
        assert!(engine.record_hits().is_empty());
    }

    #[test]
    fn empty_call_table_is_rejected() {
        assert_eq!(
            CallTable::<u8>::new("f(u8)", Vec::new()),
            Err(FaultError::EmptyCallTable)
        );
    }

    #[test]
    fn hits_text_round_trips() {
        let mut hits = BTreeMap::new();
        hits.insert(3, 9);
        hits.insert(1, 1);
        assert_eq!(parse_hits(&render_hits(&hits)), Some(hits));
    }
}
