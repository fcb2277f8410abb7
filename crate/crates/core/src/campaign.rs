//! The fault-injection fuzzing loop.
//!
//! A campaign starts with a counting run of the empty program (baseline
//! coverage and per-site hit counts), probes every live site with a few
//! random single-site programs, and then repeatedly picks a queue entry,
//! mutates it (stream havoc, splice or extend), runs it and keeps children
//! that reach new coverage.
//!
//! Execution is abstracted behind [`Executor`] so the loop can be driven by
//! real processes or by an in-process model. For parallel workers the
//! iteration is split into [`Campaign::plan`], [`Campaign::commit`] and
//! [`Campaign::admit`], which only need the shared state for the short
//! bookkeeping steps.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::coverage::{CoverageMap, NoveltyIndex};
use crate::fault::Manifest;
use crate::mutation::{self, generate_stream};
use crate::outcome::{RunOutcome, Verdict};
use crate::program::{stream_len_for, FaultProgram, ProgramEntry, Provenance};
use crate::stats::StatsRow;
use crate::triage::CrashTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Faulting,
    /// Faults off, per-site hit counters on.
    Counting,
}

pub trait Executor {
    type Error;

    fn execute(&mut self, program: &FaultProgram, mode: ExecMode) -> Result<RunOutcome, Self::Error>;
}

impl<E: Executor + ?Sized> Executor for &mut E {
    type Error = E::Error;

    fn execute(&mut self, program: &FaultProgram, mode: ExecMode) -> Result<RunOutcome, Self::Error> {
        (**self).execute(program, mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    /// Probability of picking among favored entries.
    pub p_favored: f64,
    pub stream_weight: u32,
    pub splice_weight: u32,
    pub extend_weight: u32,
    pub probes_per_site: u32,
    /// Pre-connect weird-peer crashes among a site's probes that get the
    /// site skip-listed.
    pub crash_threshold: u32,
    /// Dormant entries get `1 / dormant_divisor` of a live entry's weight.
    pub dormant_divisor: u32,
    /// Stream size for sites without a known hit count.
    pub default_probe_bytes: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            p_favored: 0.8,
            stream_weight: 6,
            splice_weight: 1,
            extend_weight: 1,
            probes_per_site: 8,
            crash_threshold: 6,
            dormant_divisor: 10,
            default_probe_bytes: 8,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.p_favored) {
            return Err("p_favored must be within [0, 1]");
        }
        if self.stream_weight + self.splice_weight + self.extend_weight == 0 {
            return Err("mutation weights must not all be zero");
        }
        if self.probes_per_site == 0 {
            return Err("probes_per_site must be positive");
        }
        if self.crash_threshold == 0 || self.crash_threshold > self.probes_per_site {
            return Err("crash_threshold must be within 1..=probes_per_site");
        }
        if self.dormant_divisor == 0 {
            return Err("dormant_divisor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CampaignError<E> {
    Executor(E),
    /// The identity run did not exit cleanly.
    Baseline(Verdict),
}

impl<E> From<E> for CampaignError<E> {
    fn from(e: E) -> Self {
        CampaignError::Executor(e)
    }
}

impl<E: fmt::Display> fmt::Display for CampaignError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CampaignError::Executor(e) => write!(f, "executor: {e}"),
            CampaignError::Baseline(v) => write!(f, "identity run ended with {v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Stream,
    Splice,
    Extend,
    /// Nothing applicable; the parent is re-run unchanged.
    Replay,
    /// Queue empty; a fresh single-site program.
    Probe,
}

#[derive(Debug, Clone, Default)]
pub struct Queue {
    programs: Vec<FaultProgram>,
    favored: BTreeSet<usize>,
    skip: BTreeSet<u32>,
    cell_credit: BTreeMap<u32, u32>,
}

impl Queue {
    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }

    pub fn get(&self, idx: usize) -> Option<&FaultProgram> {
        self.programs.get(idx)
    }

    pub fn programs(&self) -> &[FaultProgram] {
        &self.programs
    }

    pub fn favored(&self) -> &BTreeSet<usize> {
        &self.favored
    }

    pub fn skip_list(&self) -> &BTreeSet<u32> {
        &self.skip
    }

    fn push(&mut self, program: FaultProgram) -> usize {
        for &cell in &program.novel_cells {
            *self.cell_credit.entry(cell).or_default() += 1;
        }
        self.programs.push(program);
        self.refresh_favored();
        self.programs.len() - 1
    }

    /// Entries credited with at least one cell no other entry claims.
    fn refresh_favored(&mut self) {
        self.favored = self
            .programs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.novel_cells.iter().any(|c| self.cell_credit.get(c) == Some(&1)))
            .map(|(i, _)| i)
            .collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InitCursor {
    pub site_index: usize,
    pub probe: u32,
    pub pre_connect_crashes: u32,
    /// Hit count of the site at `site_index`, once calibrated.
    pub hits: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InitReport {
    pub probe_runs: u64,
    pub calibration_runs: u64,
    pub admitted: Vec<usize>,
    pub skip_listed: Vec<u32>,
    pub dormant: Vec<u32>,
    /// Pre-connect weird-peer crashes per probed site.
    pub pre_connect_crashes: BTreeMap<u32, u32>,
    /// Set when the run budget ran out mid-scan.
    pub resume: Option<InitCursor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub iteration: u64,
    pub parent: Option<usize>,
    pub kind: MutationKind,
    pub child: FaultProgram,
    /// Site whose stream changed or was appended.
    pub mutated_site: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationReport {
    pub iteration: u64,
    pub parent: Option<usize>,
    pub kind: MutationKind,
    pub verdict: Verdict,
    pub novel_cells: usize,
    pub admitted: bool,
    pub new_crash_bucket: bool,
    pub queue_len: usize,
    pub crash_buckets: usize,
    pub novel_cells_total: usize,
}

impl IterationReport {
    pub fn stats_row(&self, wall_ms: u64) -> StatsRow {
        StatsRow {
            iteration: self.iteration,
            wall_ms,
            queue_len: self.queue_len,
            crash_buckets: self.crash_buckets,
            novel_cells_total: self.novel_cells_total,
            verdict: self.verdict.as_str().into(),
        }
    }
}

/// A novel child waiting for its calibration run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingAdmission {
    pub child: FaultProgram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commit {
    pub report: IterationReport,
    pub pending: Option<PendingAdmission>,
}

/// Resizes every stream to `hits * width` bits (whole bytes), zero-padding
/// or truncating, and records the hit counts.
pub fn apply_calibration(program: &FaultProgram, hits: &BTreeMap<u32, u64>, manifest: &Manifest) -> FaultProgram {
    let mut out = program.clone();
    out.calibration.clear();
    for entry in &mut out.entries {
        let n = hits.get(&entry.site_id).copied().unwrap_or(0);
        let width = manifest.width(entry.site_id).unwrap_or(8);
        entry.stream.resize(stream_len_for(n, width), 0);
        out.calibration.insert(entry.site_id, n);
    }
    out
}

/// Runs `program` once in counting mode and sizes its streams to the
/// observed hit counts. `None` when the counting run did not exit cleanly.
pub fn calibrate<E: Executor>(
    program: &FaultProgram,
    manifest: &Manifest,
    exec: &mut E,
) -> Result<Option<FaultProgram>, E::Error> {
    let outcome = exec.execute(program, ExecMode::Counting)?;
    if outcome.verdict != Verdict::CleanExit {
        return Ok(None);
    }
    let hits = outcome.hits.unwrap_or_default();
    Ok(Some(apply_calibration(program, &hits, manifest)))
}

#[derive(Debug, Clone)]
pub struct Campaign {
    cfg: SchedulerConfig,
    manifest: Manifest,
    queue: Queue,
    novelty: NoveltyIndex,
    crashes: CrashTable,
    site_hits: BTreeMap<u32, u64>,
    site_crashes: BTreeMap<u32, u32>,
    baseline: Option<CoverageMap>,
    /// Highest count ever seen per cell, over every non-discarded run.
    reached: Vec<u8>,
    clock: u64,
    runs: u64,
}

impl Campaign {
    pub fn new(cfg: SchedulerConfig, manifest: Manifest) -> Self {
        Self::with_map_size(cfg, manifest, crate::coverage::MAP_SIZE)
    }

    pub fn with_map_size(cfg: SchedulerConfig, manifest: Manifest, map_size: usize) -> Self {
        Self {
            cfg,
            manifest,
            queue: Queue::default(),
            novelty: NoveltyIndex::with_size(map_size),
            crashes: CrashTable::new(),
            site_hits: BTreeMap::new(),
            site_crashes: BTreeMap::new(),
            baseline: None,
            reached: vec![0; map_size],
            clock: 0,
            runs: 0,
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn queue(&self) -> &Queue {
        &self.queue
    }

    pub fn novelty(&self) -> &NoveltyIndex {
        &self.novelty
    }

    pub fn crashes(&self) -> &CrashTable {
        &self.crashes
    }

    pub fn baseline(&self) -> Option<&CoverageMap> {
        self.baseline.as_ref()
    }

    pub fn site_hits(&self) -> &BTreeMap<u32, u64> {
        &self.site_hits
    }

    pub fn site_crashes(&self) -> &BTreeMap<u32, u32> {
        &self.site_crashes
    }

    /// Iterations planned so far.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Executions performed through this campaign, calibrations included.
    pub fn runs(&self) -> u64 {
        self.runs
    }

    pub fn reached_cells(&self) -> impl Iterator<Item = u32> + '_ {
        self.reached
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, _)| i as u32)
    }

    fn note_reached(&mut self, map: &CoverageMap) {
        for (dst, &src) in self.reached.iter_mut().zip(map.cells()) {
            *dst = (*dst).max(src);
        }
    }

    fn exec<E: Executor>(
        &mut self,
        exec: &mut E,
        program: &FaultProgram,
        mode: ExecMode,
    ) -> Result<RunOutcome, E::Error> {
        self.runs += 1;
        exec.execute(program, mode)
    }

    /// Counting run of the empty program: baseline coverage and hit counts.
    pub fn establish_baseline<E: Executor>(&mut self, exec: &mut E) -> Result<(), CampaignError<E::Error>> {
        let outcome = self.exec(exec, &FaultProgram::empty(), ExecMode::Counting)?;
        if outcome.verdict != Verdict::CleanExit {
            return Err(CampaignError::Baseline(outcome.verdict));
        }
        self.install_baseline(outcome);
        Ok(())
    }

    /// Installs an externally obtained identity run as the baseline.
    pub fn install_baseline(&mut self, outcome: RunOutcome) {
        let hits = outcome.hits.unwrap_or_default();
        self.site_hits = self
            .manifest
            .iter()
            .map(|s| (s.site_id, hits.get(&s.site_id).copied().unwrap_or(0)))
            .collect();
        self.novelty.observe(&outcome.coverage);
        self.note_reached(&outcome.coverage);
        self.baseline = Some(outcome.coverage);
    }

    fn admit_program(&mut self, mut program: FaultProgram, novel_cells: Vec<u32>, clock: u64) -> usize {
        program.novel_cells = novel_cells;
        program.discovery_time = clock;
        self.queue.push(program)
    }

    /// Probes every live site with `probes_per_site` random single-site
    /// programs. Sites whose probes crash the weird peer before it connects
    /// at least `crash_threshold` times are skip-listed.
    pub fn init_queue<E: Executor, R: Rng + ?Sized>(
        &mut self,
        exec: &mut E,
        rng: &mut R,
        max_runs: Option<u64>,
        resume: Option<InitCursor>,
    ) -> Result<InitReport, E::Error> {
        let mut report = InitReport::default();
        let sites: Vec<u32> = self.manifest.iter().map(|s| s.site_id).collect();
        let mut cursor = resume.unwrap_or_default();
        let mut spent = 0u64;
        let exhausted = |spent: u64| max_runs.is_some_and(|m| spent >= m);

        while cursor.site_index < sites.len() {
            let site = sites[cursor.site_index];
            if self.queue.skip.contains(&site) {
                cursor = next_site(cursor);
                continue;
            }
            let hits = match cursor.hits {
                Some(h) => h,
                None => {
                    if exhausted(spent) {
                        report.resume = Some(cursor);
                        return Ok(report);
                    }
                    let skeleton = FaultProgram::from_entries(vec![ProgramEntry::new(site, Vec::new())]);
                    self.runs += 1;
                    spent += 1;
                    report.calibration_runs += 1;
                    match calibrate(&skeleton, &self.manifest, exec)? {
                        Some(cal) => {
                            let h = cal.calibration.get(&site).copied().unwrap_or(0);
                            self.site_hits.insert(site, h);
                            h
                        }
                        None => {
                            cursor = next_site(cursor);
                            continue;
                        }
                    }
                }
            };
            cursor.hits = Some(hits);
            if hits == 0 {
                report.dormant.push(site);
                cursor = next_site(cursor);
                continue;
            }
            let width = self.manifest.width(site).unwrap_or(8);
            let len = stream_len_for(hits, width);
            let used = hits as usize * usize::from(width);
            while cursor.probe < self.cfg.probes_per_site {
                if exhausted(spent) {
                    report.resume = Some(cursor);
                    return Ok(report);
                }
                let mut probe =
                    FaultProgram::from_entries(vec![ProgramEntry::new(site, generate_stream(len, used, rng))]);
                probe.calibration.insert(site, hits);
                probe.provenance = Provenance::SiteProbe;
                let outcome = self.exec(exec, &probe, ExecMode::Faulting)?;
                spent += 1;
                report.probe_runs += 1;
                cursor.probe += 1;
                match outcome.verdict {
                    Verdict::WeirdPeerCrashPreConnect => {
                        cursor.pre_connect_crashes += 1;
                        *self.site_crashes.entry(site).or_default() += 1;
                    }
                    Verdict::TargetCrash => {
                        self.note_reached(&outcome.coverage);
                        let evidence = outcome.crash_evidence.unwrap_or_default();
                        self.crashes.record(&evidence, &probe, self.clock);
                    }
                    Verdict::Timeout => {}
                    Verdict::CleanExit | Verdict::WeirdPeerCrashPostConnect => {
                        self.note_reached(&outcome.coverage);
                        let obs = self.novelty.observe(&outcome.coverage);
                        if obs.is_novel {
                            let idx = self.admit_program(probe, obs.novel_cells, self.clock);
                            report.admitted.push(idx);
                        }
                    }
                }
            }
            report.pre_connect_crashes.insert(site, cursor.pre_connect_crashes);
            if cursor.pre_connect_crashes >= self.cfg.crash_threshold {
                self.queue.skip.insert(site);
                report.skip_listed.push(site);
            }
            cursor = next_site(cursor);
        }
        Ok(report)
    }

    fn pick_parent<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let use_favored = !self.queue.favored.is_empty() && rng.gen_bool(self.cfg.p_favored);
        let pool: Vec<usize> = if use_favored {
            self.queue.favored.iter().copied().collect()
        } else {
            (0..self.queue.len()).collect()
        };
        let live = u64::from(self.cfg.dormant_divisor);
        let weight = |i: usize| if self.queue.programs[i].is_dormant() { 1 } else { live };
        let total: u64 = pool.iter().map(|&i| weight(i)).sum();
        let mut ticket = rng.gen_range(0..total);
        for &i in &pool {
            let w = weight(i);
            if ticket < w {
                return i;
            }
            ticket -= w;
        }
        unreachable!("ticket below total weight")
    }

    fn pick_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> MutationKind {
        let c = &self.cfg;
        let total = c.stream_weight + c.splice_weight + c.extend_weight;
        let t = rng.gen_range(0..total);
        if t < c.stream_weight {
            MutationKind::Stream
        } else if t < c.stream_weight + c.splice_weight {
            MutationKind::Splice
        } else {
            MutationKind::Extend
        }
    }

    fn try_mutation<R: Rng + ?Sized>(
        &self,
        kind: MutationKind,
        parent_id: usize,
        rng: &mut R,
    ) -> Option<(FaultProgram, Option<u32>)> {
        let parent = &self.queue.programs[parent_id];
        match kind {
            MutationKind::Stream => {
                let child = mutation::mutate_stream(parent, parent_id, &self.manifest, rng)?;
                let site = child
                    .entries
                    .iter()
                    .zip(&parent.entries)
                    .find(|(c, p)| c.stream != p.stream)
                    .map(|(c, _)| c.site_id);
                Some((child, site))
            }
            MutationKind::Splice => {
                if self.queue.len() < 2 {
                    return None;
                }
                let mut other = rng.gen_range(0..self.queue.len() - 1);
                if other >= parent_id {
                    other += 1;
                }
                let child = mutation::splice(parent, parent_id, &self.queue.programs[other], other, rng)?;
                let site = child.entries.last().map(|e| e.site_id);
                Some((child, site))
            }
            MutationKind::Extend => {
                let child = mutation::extend(
                    parent,
                    parent_id,
                    &self.manifest,
                    &self.queue.skip,
                    &self.site_hits,
                    self.cfg.default_probe_bytes,
                    rng,
                )?;
                let site = child.entries.last().map(|e| e.site_id);
                Some((child, site))
            }
            MutationKind::Replay | MutationKind::Probe => None,
        }
    }

    /// Picks a parent and produces the child to run; advances the clock.
    pub fn plan<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Plan {
        self.clock += 1;
        let iteration = self.clock;
        if self.queue.is_empty() {
            let empty = FaultProgram::empty();
            let child = mutation::extend(
                &empty,
                0,
                &self.manifest,
                &self.queue.skip,
                &self.site_hits,
                self.cfg.default_probe_bytes,
                rng,
            );
            let (mut child, site) = match child {
                Some(c) => {
                    let site = c.entries.last().map(|e| e.site_id);
                    (c, site)
                }
                None => (empty, None),
            };
            child.provenance = Provenance::SiteProbe;
            return Plan {
                iteration,
                parent: None,
                kind: MutationKind::Probe,
                child,
                mutated_site: site,
            };
        }
        let parent = self.pick_parent(rng);
        let first = self.pick_kind(rng);
        let order = [first, MutationKind::Stream, MutationKind::Extend, MutationKind::Splice];
        for kind in order {
            if let Some((child, site)) = self.try_mutation(kind, parent, rng) {
                return Plan {
                    iteration,
                    parent: Some(parent),
                    kind,
                    child,
                    mutated_site: site,
                };
            }
        }
        let mut child = self.queue.programs[parent].clone();
        child.provenance = Provenance::StreamMutation(parent);
        child.novel_cells.clear();
        Plan {
            iteration,
            parent: Some(parent),
            kind: MutationKind::Replay,
            child,
            mutated_site: None,
        }
    }

    /// Books the outcome of a planned run. A novel child is returned as
    /// pending; it joins the queue once [`Campaign::admit`] sees its
    /// calibration.
    pub fn commit(&mut self, plan: Plan, outcome: &RunOutcome) -> Commit {
        self.runs += 1;
        let mut novel = 0;
        let mut new_bucket = false;
        let mut pending = None;
        match outcome.verdict {
            Verdict::WeirdPeerCrashPreConnect => {
                if let Some(site) = plan.mutated_site {
                    *self.site_crashes.entry(site).or_default() += 1;
                }
            }
            Verdict::TargetCrash => {
                self.note_reached(&outcome.coverage);
                let evidence = outcome.crash_evidence.clone().unwrap_or_default();
                new_bucket = self.crashes.record(&evidence, &plan.child, plan.iteration);
            }
            Verdict::Timeout => self.note_reached(&outcome.coverage),
            Verdict::CleanExit | Verdict::WeirdPeerCrashPostConnect => {
                self.note_reached(&outcome.coverage);
                let obs = self.novelty.observe(&outcome.coverage);
                novel = obs.novel_cells.len();
                if obs.is_novel && !plan.child.is_empty() {
                    let mut child = plan.child;
                    child.novel_cells = obs.novel_cells;
                    child.discovery_time = plan.iteration;
                    pending = Some(PendingAdmission { child });
                }
            }
        }
        Commit {
            report: IterationReport {
                iteration: plan.iteration,
                parent: plan.parent,
                kind: plan.kind,
                verdict: outcome.verdict,
                novel_cells: novel,
                admitted: false,
                new_crash_bucket: new_bucket,
                queue_len: self.queue.len(),
                crash_buckets: self.crashes.len(),
                novel_cells_total: self.novelty.cells_seen(),
            },
            pending,
        }
    }

    /// Queues a calibrated novel child. `None` (a failed calibration run)
    /// drops it.
    pub fn admit(&mut self, pending: PendingAdmission, calibrated: Option<FaultProgram>, report: &mut IterationReport) {
        self.runs += 1;
        if let Some(mut program) = calibrated {
            let cells = core::mem::take(&mut program.novel_cells);
            let cells = if cells.is_empty() {
                pending.child.novel_cells
            } else {
                cells
            };
            let clock = pending.child.discovery_time;
            self.admit_program(program, cells, clock);
            report.admitted = true;
        }
        report.queue_len = self.queue.len();
    }

    /// One full iteration: plan, run, commit, calibrate and admit.
    pub fn fuzz_one<E: Executor, R: Rng + ?Sized>(
        &mut self,
        exec: &mut E,
        rng: &mut R,
    ) -> Result<IterationReport, E::Error> {
        let plan = self.plan(rng);
        let outcome = exec.execute(&plan.child, ExecMode::Faulting)?;
        let Commit { mut report, pending } = self.commit(plan, &outcome);
        if let Some(pending) = pending {
            let calibrated = calibrate(&pending.child, &self.manifest, exec)?;
            self.admit(pending, calibrated, &mut report);
        }
        Ok(report)
    }
}

fn next_site(c: InitCursor) -> InitCursor {
    InitCursor {
        site_index: c.site_index + 1,
        ..InitCursor::default()
    }
}
