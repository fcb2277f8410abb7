//! Campaign drivers: fault fuzzing, transcript-replay baseline,
//! identity check, crash reproduction and transcript recording.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weirdpeer_core::campaign::{calibrate, Campaign, CampaignError, Commit, ExecMode, Executor, InitReport};
use weirdpeer_core::stats::StatsRow;
use weirdpeer_core::transcript::Transcript;
use weirdpeer_core::triage::{dedup_key, BucketKey};
use weirdpeer_core::{CoverageMap, FaultProgram, Mode, Verdict};

use crate::baseline::{ReplayFuzzer, ReplayOptions};
use crate::config::{CampaignConfig, ConfigError};
use crate::executor::PeerExecutor;
use crate::orchestrator::{Orchestrator, OrchestratorError, PeerSpec};
use crate::output::{OutputDir, Sidecar};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("identity run ended with {0}")]
    Baseline(Verdict),
    #[error("{path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CampaignError<OrchestratorError>> for RunError {
    fn from(e: CampaignError<OrchestratorError>) -> Self {
        match e {
            CampaignError::Executor(e) => RunError::Orchestrator(e),
            CampaignError::Baseline(v) => RunError::Baseline(v),
        }
    }
}

fn input_err(path: &Path, reason: impl Into<String>) -> RunError {
    RunError::Input {
        path: path.into(),
        reason: reason.into(),
    }
}

fn weird_spec(cfg: &CampaignConfig) -> Result<&PeerSpec, RunError> {
    cfg.weird.as_ref().ok_or_else(|| {
        RunError::Config(ConfigError::Invalid {
            field: "weird",
            reason: "this mode needs a weird peer".into(),
        })
    })
}

/// Run and wall-clock limits of a campaign.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    /// Executions, calibration and probe runs included.
    pub runs: Option<u64>,
    pub wall: Option<Duration>,
    started: Instant,
}

impl Budget {
    pub fn start(runs: Option<u64>, wall: Option<Duration>) -> Self {
        Self {
            runs,
            wall,
            started: Instant::now(),
        }
    }

    pub fn from_config(cfg: &CampaignConfig) -> Self {
        Self::start(
            cfg.campaign.iterations,
            cfg.campaign.wall_time_s.map(Duration::from_secs),
        )
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.elapsed().as_millis() as u64
    }

    pub fn remaining_runs(&self, used: u64) -> Option<u64> {
        self.runs.map(|r| r.saturating_sub(used))
    }

    pub fn spent(&self, used: u64) -> bool {
        self.runs.is_some_and(|r| used >= r) || self.wall.is_some_and(|w| self.elapsed() >= w)
    }
}

/// Early-stop hook polled after each iteration.
pub type FaultStop<'a> = &'a (dyn Fn(&Campaign) -> bool + Sync);

#[derive(Debug)]
pub struct FaultRun {
    pub campaign: Campaign,
    pub init: InitReport,
    pub rows: Vec<StatsRow>,
    pub stopped_early: bool,
    pub elapsed: Duration,
}

struct Shared {
    campaign: Campaign,
    rows: Vec<StatsRow>,
    in_flight: u64,
    stopped: bool,
}

fn seeded_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64);
    rng
}

/// Runs a fault-injection campaign. With one worker the campaign is a pure
/// function of the configuration and the peers' behaviour.
pub fn fault_campaign(
    cfg: &CampaignConfig,
    out: &OutputDir,
    stop: Option<FaultStop<'_>>,
) -> Result<FaultRun, RunError> {
    let weird = weird_spec(cfg)?;
    let budget = Budget::from_config(cfg);
    let workers = cfg.campaign.workers.max(1);
    let mut executors = (0..workers)
        .map(|w| PeerExecutor::new(out.work_dir(w), cfg.orchestrator, weird.clone(), cfg.target.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..workers).map(|w| seeded_rng(cfg.campaign.seed, w)).collect();

    let manifest = executors[0].fetch_manifest()?;
    let mut campaign = Campaign::new(cfg.scheduler_config(), manifest);
    campaign.establish_baseline(&mut executors[0])?;
    let remaining = budget.remaining_runs(campaign.runs());
    let init = campaign.init_queue(&mut executors[0], &mut rngs[0], remaining, None)?;
    let stopped = init.resume.is_some() || stop.is_some_and(|s| s(&campaign));

    let shared = Mutex::new(Shared {
        campaign,
        rows: Vec::new(),
        in_flight: 0,
        stopped,
    });
    std::thread::scope(|scope| -> Result<(), RunError> {
        let handles: Vec<_> = executors
            .iter_mut()
            .zip(rngs.iter_mut())
            .map(|(exec, rng)| scope.spawn(|| worker_loop(&shared, exec, rng, &budget, stop)))
            .collect();
        let mut first_err = None;
        for h in handles {
            if let Err(e) = h.join().expect("worker panicked") {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    })?;
    let Shared {
        campaign,
        rows,
        stopped,
        ..
    } = shared.into_inner().unwrap_or_else(|e| e.into_inner());

    let run = FaultRun {
        stopped_early: stopped && !budget.spent(campaign.runs()),
        campaign,
        init,
        rows,
        elapsed: budget.elapsed(),
    };
    write_fault_outputs(cfg, out, &run)?;
    Ok(run)
}

fn worker_loop(
    shared: &Mutex<Shared>,
    exec: &mut PeerExecutor,
    rng: &mut ChaCha8Rng,
    budget: &Budget,
    stop: Option<FaultStop<'_>>,
) -> Result<(), RunError> {
    let lock = || shared.lock().unwrap_or_else(|e| e.into_inner());
    let release = |n: u64| lock().in_flight -= n;
    loop {
        let plan = {
            let mut s = lock();
            if s.stopped || budget.spent(s.campaign.runs() + s.in_flight) {
                return Ok(());
            }
            s.in_flight += 1;
            s.campaign.plan(rng)
        };
        let outcome = match exec.execute(&plan.child, ExecMode::Faulting) {
            Ok(o) => o,
            Err(e) => {
                release(1);
                lock().stopped = true;
                return Err(e.into());
            }
        };
        let Commit { mut report, pending } = {
            let mut s = lock();
            s.in_flight -= 1;
            let commit = s.campaign.commit(plan, &outcome);
            if commit.pending.is_some() {
                s.in_flight += 1;
            }
            commit
        };
        if let Some(pending) = pending {
            let manifest = lock().campaign.manifest().clone();
            let calibrated = match calibrate(&pending.child, &manifest, exec) {
                Ok(c) => c,
                Err(e) => {
                    release(1);
                    lock().stopped = true;
                    return Err(e.into());
                }
            };
            let mut s = lock();
            s.in_flight -= 1;
            s.campaign.admit(pending, calibrated, &mut report);
        }
        let mut s = lock();
        s.rows.push(report.stats_row(budget.elapsed_ms()));
        if stop.is_some_and(|f| f(&s.campaign)) {
            s.stopped = true;
        }
    }
}

fn write_fault_outputs(cfg: &CampaignConfig, out: &OutputDir, run: &FaultRun) -> Result<(), RunError> {
    out.reset_corpus()?;
    let c = &run.campaign;
    for (i, p) in c.queue().programs().iter().enumerate() {
        let bytes = p
            .encode()
            .map_err(|e| input_err(out.queue_dir().as_path(), e.to_string()))?;
        fs::write(out.queue_dir().join(p.file_name(i)), bytes)?;
    }
    for (i, r) in c.crashes().iter().enumerate() {
        let path = out.crash_dir().join(format!("id-{i:06},time-{}", r.first_seen));
        let bytes = r.representative.encode().map_err(|e| input_err(&path, e.to_string()))?;
        fs::write(&path, bytes)?;
        let sidecar = Sidecar {
            bug: r.bug.clone(),
            key: r.bucket_key.clone(),
            frames: r.frames.clone(),
        };
        fs::write(Sidecar::path_for(&path), sidecar.render())?;
    }
    out.write_stats(&run.rows)?;
    fs::write(out.root().join("config.toml"), cfg.to_toml())?;
    let mut bugs: Vec<&str> = c.crashes().bugs().collect();
    bugs.sort_unstable();
    bugs.dedup();
    out.write_summary(&[
        ("mode", "fault".into()),
        ("seed", cfg.campaign.seed.to_string()),
        ("runs", c.runs().to_string()),
        ("iterations", c.clock().to_string()),
        ("elapsed_ms", run.elapsed.as_millis().to_string()),
        ("queue", c.queue().len().to_string()),
        ("crash_buckets", c.crashes().len().to_string()),
        ("bugs", bugs.join(",")),
        ("novel_cells", c.novelty().cells_seen().to_string()),
        ("skip_listed", join_ids(c.queue().skip_list().iter())),
        ("stopped_early", run.stopped_early.to_string()),
    ])?;
    Ok(())
}

fn join_ids<'a>(ids: impl Iterator<Item = &'a u32>) -> String {
    ids.map(u32::to_string).collect::<Vec<_>>().join(",")
}

/// Early-stop hook of the baseline campaign.
pub type BaselineStop<'a> = &'a dyn Fn(&ReplayFuzzer) -> bool;

#[derive(Debug)]
pub struct BaselineRun {
    pub fuzzer: ReplayFuzzer,
    pub rows: Vec<StatsRow>,
    /// Iterations whose client never connected.
    pub failed_runs: u64,
    pub stopped_early: bool,
    pub elapsed: Duration,
}

/// Transcript-replay baseline. Always single-worker.
pub fn baseline_campaign(
    cfg: &CampaignConfig,
    out: &OutputDir,
    stop: Option<BaselineStop<'_>>,
) -> Result<BaselineRun, RunError> {
    let section = cfg.baseline.as_ref().ok_or_else(|| {
        RunError::Config(ConfigError::Invalid {
            field: "baseline",
            reason: "baseline mode needs a [baseline] section".into(),
        })
    })?;
    let bytes = fs::read(&section.transcript)?;
    let seed = Transcript::decode(&bytes).map_err(|e| input_err(&section.transcript, format!("{e:?}")))?;
    let opts = ReplayOptions {
        transport: section.transport.into(),
        reply_timeout: Duration::from_millis(section.reply_timeout_ms),
    };
    let mut rng = seeded_rng(cfg.campaign.seed, 0);
    let mut orch = Orchestrator::new(out.work_dir(0), cfg.orchestrator)?;
    let budget = Budget::from_config(cfg);
    let mut fuzzer = ReplayFuzzer::new(seed, opts);
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut stopped = false;

    let first = fuzzer.replay_verbatim(&mut orch, &cfg.target, 0)?;
    failed += u64::from(first.failed);
    rows.push(first.stats_row(budget.elapsed_ms()));
    while !budget.spent(fuzzer.clock()) {
        if stop.is_some_and(|s| s(&fuzzer)) {
            stopped = true;
            break;
        }
        let r = fuzzer.replay_fuzz_one(&mut orch, &cfg.target, &mut rng)?;
        failed += u64::from(r.failed);
        rows.push(r.stats_row(budget.elapsed_ms()));
    }

    let run = BaselineRun {
        fuzzer,
        rows,
        failed_runs: failed,
        stopped_early: stopped,
        elapsed: budget.elapsed(),
    };
    write_baseline_outputs(cfg, out, &run)?;
    Ok(run)
}

fn write_baseline_outputs(cfg: &CampaignConfig, out: &OutputDir, run: &BaselineRun) -> Result<(), RunError> {
    out.reset_corpus()?;
    for (i, t) in run.fuzzer.corpus().iter().enumerate() {
        fs::write(out.queue_dir().join(format!("id-{i:06}.transcript")), t.encode())?;
    }
    for (i, c) in run.fuzzer.crashes().enumerate() {
        let path = out
            .crash_dir()
            .join(format!("id-{i:06},time-{}.transcript", c.first_seen));
        fs::write(&path, c.transcript.encode())?;
        let sidecar = Sidecar {
            bug: c.evidence.bug.clone(),
            key: c.bucket_key.clone(),
            frames: c.evidence.frames.clone(),
        };
        fs::write(Sidecar::path_for(&path), sidecar.render())?;
    }
    out.write_stats(&run.rows)?;
    fs::write(out.root().join("config.toml"), cfg.to_toml())?;
    out.write_summary(&[
        ("mode", "baseline".into()),
        ("seed", cfg.campaign.seed.to_string()),
        ("runs", run.fuzzer.clock().to_string()),
        ("failed_runs", run.failed_runs.to_string()),
        ("elapsed_ms", run.elapsed.as_millis().to_string()),
        ("queue", run.fuzzer.corpus().len().to_string()),
        ("crash_buckets", run.fuzzer.crashes().count().to_string()),
        ("novel_cells", run.fuzzer.novelty().cells_seen().to_string()),
        ("stopped_early", run.stopped_early.to_string()),
    ])?;
    Ok(())
}

/// Weird peer spec with the transcript flag and `path` appended.
fn with_transcript(cfg: &CampaignConfig, weird: &PeerSpec, path: &Path) -> Result<PeerSpec, RunError> {
    let flag = cfg.campaign.transcript_flag.as_deref().ok_or_else(|| {
        RunError::Config(ConfigError::Invalid {
            field: "campaign.transcript_flag",
            reason: "needed to capture transcripts".into(),
        })
    })?;
    let mut spec = weird.clone();
    spec.args.push(flag.to_string());
    spec.args.push(path.to_string_lossy().into_owned());
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub runs: usize,
    pub verdicts: Vec<Verdict>,
    /// Cells whose value differed from the first run in any later run.
    pub differing_cells: Vec<u32>,
    /// Whether every captured transcript equals the first one; `None` when
    /// no transcript flag is configured.
    pub transcripts_equal: Option<bool>,
    pub coverage: CoverageMap,
}

impl IdentityReport {
    pub fn stable(&self) -> bool {
        self.verdicts.iter().all(|&v| v == Verdict::CleanExit)
            && self.differing_cells.is_empty()
            && self.transcripts_equal != Some(false)
    }
}

/// Runs the empty program repeatedly and compares coverage and transcripts.
pub fn identity_check(cfg: &CampaignConfig, out: &OutputDir) -> Result<IdentityReport, RunError> {
    let weird = weird_spec(cfg)?;
    let runs = cfg.campaign.identity_runs;
    let transcript_path = out.work_dir(0).join("identity.transcript");
    let spec = match cfg.campaign.transcript_flag {
        Some(_) => with_transcript(cfg, weird, &transcript_path)?,
        None => weird.clone(),
    };
    let mut exec = PeerExecutor::new(out.work_dir(0), cfg.orchestrator, spec, cfg.target.clone())?;
    let mut verdicts = Vec::with_capacity(runs);
    let mut first: Option<CoverageMap> = None;
    let mut differing = std::collections::BTreeSet::new();
    let mut first_transcript: Option<Vec<u8>> = None;
    let mut transcripts_equal = cfg.campaign.transcript_flag.as_ref().map(|_| true);
    for _ in 0..runs {
        let _ = fs::remove_file(&transcript_path);
        let record = exec.run(&FaultProgram::empty(), Mode::Off)?;
        verdicts.push(record.outcome.verdict);
        match &first {
            None => first = Some(record.outcome.coverage),
            Some(base) => {
                for (i, (a, b)) in base.cells().iter().zip(record.outcome.coverage.cells()).enumerate() {
                    if a != b {
                        differing.insert(i as u32);
                    }
                }
            }
        }
        if let Some(eq) = transcripts_equal.as_mut() {
            let bytes = fs::read(&transcript_path).unwrap_or_default();
            match &first_transcript {
                None => first_transcript = Some(bytes),
                Some(t) => *eq &= *t == bytes,
            }
        }
    }
    let coverage = first.unwrap_or_default();
    fs::write(out.root().join("baseline.map"), coverage.cells())?;
    Ok(IdentityReport {
        runs,
        verdicts,
        differing_cells: differing.into_iter().collect(),
        transcripts_equal,
        coverage,
    })
}

/// Records one identity-mode session transcript to `dest`.
pub fn record_transcript(cfg: &CampaignConfig, workdir: &Path, dest: &Path) -> Result<Transcript, RunError> {
    let weird = weird_spec(cfg)?;
    let spec = with_transcript(cfg, weird, dest)?;
    let _ = fs::remove_file(dest);
    let mut exec = PeerExecutor::new(workdir, cfg.orchestrator, spec, cfg.target.clone())?;
    let record = exec.run(&FaultProgram::empty(), Mode::Off)?;
    if record.outcome.verdict != Verdict::CleanExit {
        return Err(RunError::Baseline(record.outcome.verdict));
    }
    let bytes = fs::read(dest)?;
    Transcript::decode(&bytes).map_err(|e| input_err(dest, format!("{e:?}")))
}

#[derive(Debug, Clone)]
pub struct ReproduceReport {
    pub runs: usize,
    pub crashed: usize,
    /// Crashing runs whose bucket key matched the expected one.
    pub matched: usize,
    pub expected: Option<BucketKey>,
    pub keys: Vec<BucketKey>,
    pub hint: Option<String>,
}

impl ReproduceReport {
    pub fn reproduced(&self) -> bool {
        self.crashed == self.runs && (self.expected.is_none() || self.matched == self.runs)
    }
}

/// Re-runs a crashing fault program `runs` times. The expected bucket is
/// read from the input's sidecar when present.
pub fn reproduce(cfg: &CampaignConfig, input: &Path, workdir: &Path, runs: usize) -> Result<ReproduceReport, RunError> {
    let weird = weird_spec(cfg)?;
    let bytes = fs::read(input)?;
    let program = FaultProgram::decode(&bytes).map_err(|e| input_err(input, e.to_string()))?;
    let sidecar = fs::read_to_string(Sidecar::path_for(input))
        .ok()
        .and_then(|t| Sidecar::parse(&t));
    let expected = sidecar.as_ref().map(|s| s.key.clone());
    let mut exec = PeerExecutor::new(workdir, cfg.orchestrator, weird.clone(), cfg.target.clone())?;
    let mut crashed = 0;
    let mut matched = 0;
    let mut keys = Vec::new();
    for _ in 0..runs {
        let record = exec.run(&program, Mode::Faulting)?;
        if record.outcome.verdict != Verdict::TargetCrash {
            continue;
        }
        crashed += 1;
        let frames = record.outcome.crash_evidence.map(|e| e.frames).unwrap_or_default();
        let key = dedup_key(&frames);
        if expected.as_ref() == Some(&key) {
            matched += 1;
        }
        keys.push(key);
    }
    let hint = match (&sidecar, crashed) {
        (Some(Sidecar { bug: Some(bug), .. }), 0) if !target_arms(&cfg.target, bug) => {
            Some(format!("bug {bug} is not armed in the target's arguments"))
        }
        _ => None,
    };
    Ok(ReproduceReport {
        runs,
        crashed,
        matched,
        expected,
        keys,
        hint,
    })
}

/// Whether the target's `--arm` list names `bug`, by full id or by its
/// two-character alias.
fn target_arms(target: &PeerSpec, bug: &str) -> bool {
    let names = |list: &str| {
        list.split(',')
            .any(|b| b.trim() == bug || bug.strip_prefix(b.trim()).is_some_and(|r| r.starts_with('_')))
    };
    target.args.windows(2).any(|w| w[0] == "--arm" && names(&w[1]))
        || target.args.iter().filter_map(|a| a.strip_prefix("--arm=")).any(names)
}
