//! Allocation-only core of `weirdpeer`.
//!
//! Everything in here is pure: fault semantics, the fault-program file
//! format, coverage novelty, stream mutation, queue scheduling, crash
//! bucketing and the wire codecs shared by the testbed. Process control,
//! sockets and files live in the `weirdpeer` crate.
#![no_std]

extern crate alloc;

pub mod campaign;
pub mod control;
pub mod coverage;
pub mod digest;
pub mod fault;
pub mod frame;
pub mod mutation;
pub mod outcome;
pub mod program;
pub mod stats;
pub mod transcript;
pub mod triage;

pub use coverage::{bucketize, CoverageMap, NoveltyIndex, Observation, MAP_SIZE};
pub use fault::{
    CallAction, CallTable, FaultEngine, FaultError, FaultStream, Manifest, Mode, SiteDescriptor, SiteHandle, SiteKind,
};
pub use outcome::{CrashEvidence, ExitInfo, RunOutcome, Verdict};
pub use program::{FaultProgram, ProgramEntry, Provenance};
pub use triage::{dedup_key, BucketKey, CrashReport, CrashTable};
