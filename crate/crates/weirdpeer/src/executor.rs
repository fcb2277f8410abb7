//! Runs fault programs through the orchestrator.

use std::ffi::OsString;
use std::path::PathBuf;

use weirdpeer_core::campaign::{ExecMode, Executor};
use weirdpeer_core::fault::parse_hits;
use weirdpeer_core::{FaultProgram, Manifest, Mode, RunOutcome};

use crate::env;
use crate::orchestrator::{Orchestrator, OrchestratorError, PeerSpec, RunRecord, Timeouts};

/// A (weird, target) pair plus the orchestrator that supervises it.
#[derive(Debug)]
pub struct PeerExecutor {
    orch: Orchestrator,
    weird: PeerSpec,
    target: PeerSpec,
    last: Option<RunRecord>,
}

impl PeerExecutor {
    pub fn new(
        workdir: impl Into<PathBuf>,
        timeouts: Timeouts,
        weird: PeerSpec,
        target: PeerSpec,
    ) -> std::io::Result<Self> {
        Ok(Self {
            orch: Orchestrator::new(workdir, timeouts)?,
            weird,
            target,
            last: None,
        })
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn weird(&self) -> &PeerSpec {
        &self.weird
    }

    pub fn target(&self) -> &PeerSpec {
        &self.target
    }

    /// Full record of the most recent run.
    pub fn last_record(&self) -> Option<&RunRecord> {
        self.last.as_ref()
    }

    fn scratch(&self, name: &str) -> PathBuf {
        self.orch.workdir().join(name)
    }

    /// Asks the weird peer for its site manifest with an identity run.
    pub fn fetch_manifest(&mut self) -> Result<Manifest, OrchestratorError> {
        let path = self.scratch("manifest.txt");
        let _ = std::fs::remove_file(&path);
        let env = vec![
            (env::MODE.to_string(), OsString::from(Mode::Off.as_str())),
            (env::MANIFEST.to_string(), path.clone().into_os_string()),
        ];
        let record = self.orch.run_once(&self.weird, &env, &self.target)?;
        let text = std::fs::read_to_string(&path).map_err(|e| {
            std::io::Error::new(
                e.kind(),
                format!(
                    "weird peer wrote no manifest (weird {:?}, target {:?})",
                    record.weird_exit, record.outcome.target_exit
                ),
            )
        })?;
        Manifest::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()).into())
    }

    /// One run with an explicit runtime mode.
    pub fn run(&mut self, program: &FaultProgram, mode: Mode) -> Result<RunRecord, OrchestratorError> {
        let program_path = self.scratch("program.ftnp");
        let hits_path = self.scratch("hits.txt");
        let _ = std::fs::remove_file(&hits_path);
        let mut env = vec![(env::MODE.to_string(), OsString::from(mode.as_str()))];
        if mode == Mode::Faulting {
            let bytes = program
                .encode()
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
            std::fs::write(&program_path, bytes)?;
            env.push((env::PROGRAM.to_string(), program_path.into_os_string()));
        }
        if mode != Mode::Off {
            env.push((env::HITS.to_string(), hits_path.clone().into_os_string()));
        }
        let mut record = self.orch.run_once(&self.weird, &env, &self.target)?;
        if mode == Mode::Counting {
            record.outcome.hits = std::fs::read_to_string(&hits_path).ok().and_then(|t| parse_hits(&t));
        }
        self.last = Some(record.clone());
        Ok(record)
    }
}

impl Executor for PeerExecutor {
    type Error = OrchestratorError;

    fn execute(&mut self, program: &FaultProgram, mode: ExecMode) -> Result<RunOutcome, Self::Error> {
        let mode = match mode {
            ExecMode::Faulting => Mode::Faulting,
            ExecMode::Counting => Mode::Counting,
        };
        Ok(self.run(program, mode)?.outcome)
    }
}
