//! Verdicts of one orchestrated exchange.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::coverage::CoverageMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    CleanExit,
    TargetCrash,
    WeirdPeerCrashPreConnect,
    WeirdPeerCrashPostConnect,
    Timeout,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::CleanExit => "clean",
            Verdict::TargetCrash => "target_crash",
            Verdict::WeirdPeerCrashPreConnect => "weird_crash_pre",
            Verdict::WeirdPeerCrashPostConnect => "weird_crash_post",
            Verdict::Timeout => "timeout",
        }
    }

    /// Whether the run's coverage may feed the novelty index.
    pub fn keeps_coverage(self) -> bool {
        matches!(self, Verdict::CleanExit | Verdict::WeirdPeerCrashPostConnect)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "clean" => Verdict::CleanExit,
            "target_crash" => Verdict::TargetCrash,
            "weird_crash_pre" => Verdict::WeirdPeerCrashPreConnect,
            "weird_crash_post" => Verdict::WeirdPeerCrashPostConnect,
            "timeout" => Verdict::Timeout,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExitInfo {
    Code(i32),
    Signal(i32),
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CrashEvidence {
    /// Bug identifier from an `FTN-BUG` line, when the target printed one.
    pub bug: Option<String>,
    /// Innermost first.
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub target_exit: ExitInfo,
    pub duration_ms: u64,
    pub coverage: CoverageMap,
    pub crash_evidence: Option<CrashEvidence>,
    pub ready_latency_ms: Option<u64>,
    /// Per-site hit counts of the weird peer, present for counting runs.
    pub hits: Option<BTreeMap<u32, u64>>,
}

impl RunOutcome {
    pub fn new(verdict: Verdict, coverage: CoverageMap) -> Self {
        Self {
            verdict,
            target_exit: ExitInfo::Unknown,
            duration_ms: 0,
            coverage,
            crash_evidence: None,
            ready_latency_ms: None,
            hits: None,
        }
    }
}
