//! Fault runtime linked into a weird peer.
//!
//! The peer registers its sites once at startup with [`init`], then wraps
//! values, branches, switches and calls with the functions below. Sites
//! execute on one thread; state lives in a thread-local engine.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use weirdpeer_core::fault::{render_hits, CallAction, CallTable};
use weirdpeer_core::{FaultEngine, FaultError, FaultProgram, Mode, SiteDescriptor};

use crate::env;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Site(#[from] FaultError),
    #[error("bad {var}: {reason}")]
    Env { var: &'static str, reason: String },
    #[error("fault program {path}: {reason}")]
    Program { path: PathBuf, reason: String },
}

struct State {
    engine: FaultEngine,
    hits_path: Option<PathBuf>,
}

thread_local! {
    static STATE: RefCell<State> = RefCell::new(State {
        engine: FaultEngine::new(Mode::Off),
        hits_path: None,
    });
}

/// Registers `sites` and configures the engine from the environment.
pub fn init(sites: impl IntoIterator<Item = SiteDescriptor>) -> Result<(), RuntimeError> {
    let mode = match std::env::var(env::MODE) {
        Ok(m) => m.parse().map_err(|_| RuntimeError::Env {
            var: env::MODE,
            reason: format!("unknown mode {m:?}"),
        })?,
        Err(_) => Mode::Off,
    };
    let program = match std::env::var_os(env::PROGRAM) {
        Some(path) if mode == Mode::Faulting => {
            let path = PathBuf::from(path);
            let bytes = std::fs::read(&path).map_err(|e| RuntimeError::Program {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let program = FaultProgram::decode(&bytes).map_err(|e| RuntimeError::Program {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            Some(program)
        }
        _ => None,
    };
    init_with(mode, program.as_ref(), sites)?;
    let hits = std::env::var_os(env::HITS).map(PathBuf::from);
    STATE.with(|s| s.borrow_mut().hits_path = hits);
    if let Some(path) = std::env::var_os(env::MANIFEST) {
        let text = manifest();
        std::fs::write(&path, text).map_err(|e| RuntimeError::Env {
            var: env::MANIFEST,
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

/// Replaces the thread's engine. Used by [`init`] and by in-process tests.
pub fn init_with(
    mode: Mode,
    program: Option<&FaultProgram>,
    sites: impl IntoIterator<Item = SiteDescriptor>,
) -> Result<(), FaultError> {
    let mut engine = FaultEngine::new(mode);
    for site in sites {
        engine.register_site(site)?;
    }
    engine.seal();
    if let Some(p) = program {
        engine.load_program(p);
    }
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        s.engine = engine;
        s.hits_path = None;
    });
    Ok(())
}

fn with_engine<T>(f: impl FnOnce(&mut FaultEngine) -> T) -> T {
    STATE.with(|s| f(&mut s.borrow_mut().engine))
}

/// Value load or store. Unregistered sites pass the value through.
pub fn value(site_id: u32, original: u64) -> u64 {
    with_engine(|e| match e.handle(site_id) {
        Some(h) => e.apply_value(h, original),
        None => original,
    })
}

pub fn branch(site_id: u32, condition: bool) -> bool {
    with_engine(|e| match e.handle(site_id) {
        Some(h) => e.apply_branch(h, condition),
        None => condition,
    })
}

/// Index of the switch arm to take among `case_count` arms, default included.
pub fn switch(site_id: u32, original_index: usize, case_count: usize) -> usize {
    with_engine(|e| match e.handle(site_id) {
        Some(h) => e.apply_switch(h, original_index, case_count),
        None => original_index,
    })
}

/// Picks the table entry to call; `None` means the call is skipped and the
/// caller uses the site's default return value.
pub fn call<T>(site_id: u32, table: &CallTable<T>) -> Option<&T> {
    let action = with_engine(|e| match e.handle(site_id) {
        Some(h) => e.apply_call(h, table.len()),
        None => CallAction::CallEntryAt(0),
    });
    match action {
        CallAction::CallEntryAt(i) => table.get(i),
        CallAction::SkipCall => None,
    }
}

pub fn hits() -> BTreeMap<u32, u64> {
    with_engine(|e| e.record_hits())
}

pub fn manifest() -> String {
    with_engine(|e| e.manifest())
}

/// Writes the hit counts if the orchestrator asked for them. Call before
/// exiting, including on abort paths.
pub fn finish() {
    let (path, text) = STATE.with(|s| {
        let s = s.borrow();
        (s.hits_path.clone(), render_hits(&s.engine.record_hits()))
    });
    if let Some(path) = path {
        let _ = std::fs::write(path, text);
    }
}

/// Fatal error in the weird peer itself: flush counters and abort.
pub fn abort_with(reason: &str) -> ! {
    finish();
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "weird peer aborting: {reason}");
    let _ = err.flush();
    std::process::abort()
}
