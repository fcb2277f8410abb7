//! Crash bucketing by the five innermost stack frames.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::outcome::CrashEvidence;
use crate::program::FaultProgram;

pub const KEY_FRAMES: usize = 5;
/// Rendering of a padding slot in a bucket key.
pub const SENTINEL: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketKey([Option<String>; KEY_FRAMES]);

impl BucketKey {
    pub fn frames(&self) -> &[Option<String>; KEY_FRAMES] {
        &self.0
    }

    /// The key of crashes without usable frames.
    pub fn catch_all() -> Self {
        Self(Default::default())
    }

    pub fn is_catch_all(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    /// Parses the tab-separated form produced by `Display`.
    pub fn parse(text: &str) -> Option<Self> {
        let mut key = Self::catch_all();
        let mut n = 0;
        for (slot, part) in key.0.iter_mut().zip(text.split('\t')) {
            *slot = (part != SENTINEL).then(|| String::from(part));
            n += 1;
        }
        (n == KEY_FRAMES && text.split('\t').count() == KEY_FRAMES).then_some(key)
    }
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, frame) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\t")?;
            }
            f.write_str(frame.as_deref().unwrap_or(SENTINEL))?;
        }
        Ok(())
    }
}

/// First five frames, innermost first, padded with the sentinel.
pub fn dedup_key<S: AsRef<str>>(frames: &[S]) -> BucketKey {
    let mut key = BucketKey::catch_all();
    for (slot, frame) in key.0.iter_mut().zip(frames) {
        *slot = Some(String::from(frame.as_ref()));
    }
    key
}

/// Parses a testbed crash record: an `FTN-BUG <id>` line followed by
/// `FRAME <name>` lines. Anything else on the stream is ignored.
pub fn parse_crash_record(text: &str) -> CrashEvidence {
    let mut evidence = CrashEvidence::default();
    let mut in_record = false;
    for line in text.lines() {
        let line = line.trim_end();
        if let Some(id) = line.strip_prefix("FTN-BUG ") {
            evidence.bug = Some(String::from(id.trim()));
            evidence.frames.clear();
            in_record = true;
        } else if in_record {
            match line.strip_prefix("FRAME ") {
                Some(name) => evidence.frames.push(String::from(name.trim())),
                None => in_record = false,
            }
        }
    }
    evidence
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashReport {
    pub bucket_key: BucketKey,
    pub bug: Option<String>,
    pub frames: Vec<String>,
    pub representative: FaultProgram,
    pub first_seen: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CrashTable {
    reports: BTreeMap<BucketKey, CrashReport>,
    order: Vec<BucketKey>,
}

impl CrashTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one crash; returns true when it opened a new bucket.
    pub fn record(&mut self, evidence: &CrashEvidence, program: &FaultProgram, clock: u64) -> bool {
        let key = dedup_key(&evidence.frames);
        if let Some(report) = self.reports.get_mut(&key) {
            report.count += 1;
            return false;
        }
        self.order.push(key.clone());
        self.reports.insert(
            key.clone(),
            CrashReport {
                bucket_key: key,
                bug: evidence.bug.clone(),
                frames: evidence.frames.clone(),
                representative: program.clone(),
                first_seen: clock,
                count: 1,
            },
        );
        true
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, key: &BucketKey) -> Option<&CrashReport> {
        self.reports.get(key)
    }

    /// Reports in the order their buckets were first seen.
    pub fn iter(&self) -> impl Iterator<Item = &CrashReport> {
        self.order.iter().map(|k| &self.reports[k])
    }

    pub fn bugs(&self) -> impl Iterator<Item = &str> {
        self.iter().filter_map(|r| r.bug.as_deref())
    }
}
