//! Environment variables shared by the orchestrator and the peer runtimes.

/// `faulting`, `counting` or `off`.
pub const MODE: &str = "FTN_MODE";
/// Path of the fault-program file to load.
pub const PROGRAM: &str = "FTN_PROGRAM";
/// Where the weird peer writes per-site hit counts on exit.
pub const HITS: &str = "FTN_HITS";
/// Where the weird peer writes its site manifest at startup.
pub const MANIFEST: &str = "FTN_MANIFEST";
/// Coverage map file of the target peer.
pub const COVERAGE: &str = "FTN_COVERAGE";
/// Descriptor number of the control-channel socket.
pub const CONTROL_FD: &str = "FTN_CONTROL_FD";
