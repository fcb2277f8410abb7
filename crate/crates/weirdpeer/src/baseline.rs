//! Transcript-replay fuzzer used as the comparison baseline.
//!
//! Each iteration picks a transcript from the corpus, havocs one of its
//! client records with the same operators the fault fuzzer applies to
//! streams, replays the client records in order against a freshly spawned
//! target server and drains the replies without interpreting them. Runs
//! that reach new coverage add their transcript to the corpus.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use rand::Rng;
use weirdpeer_core::mutation::havoc;
use weirdpeer_core::stats::StatsRow;
use weirdpeer_core::transcript::{Direction, Transcript};
use weirdpeer_core::triage::{dedup_key, BucketKey};
use weirdpeer_core::{CrashEvidence, NoveltyIndex, Verdict};

use crate::orchestrator::{Orchestrator, OrchestratorError, PeerSpec};
use crate::testbed::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayOptions {
    pub transport: Transport,
    /// Per-read wait while draining replies.
    pub reply_timeout: Duration,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            transport: Transport::Tcp,
            reply_timeout: Duration::from_millis(50),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineCrash {
    pub bucket_key: BucketKey,
    pub evidence: CrashEvidence,
    pub transcript: Transcript,
    pub first_seen: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub iteration: u64,
    pub parent: usize,
    /// Index of the mutated record, `None` for a verbatim replay.
    pub mutated_record: Option<usize>,
    pub verdict: Verdict,
    pub novel_cells: usize,
    pub admitted: bool,
    /// The client could not connect, even after one retry.
    pub failed: bool,
    pub corpus_len: usize,
    pub crash_buckets: usize,
    pub novel_cells_total: usize,
}

impl ReplayReport {
    pub fn stats_row(&self, wall_ms: u64) -> StatsRow {
        StatsRow {
            iteration: self.iteration,
            wall_ms,
            queue_len: self.corpus_len,
            crash_buckets: self.crash_buckets,
            novel_cells_total: self.novel_cells_total,
            verdict: self.verdict.as_str().into(),
        }
    }
}

/// Sends the client records of `transcript` to `addr` and drains replies.
/// Returns false when no connection could be made.
pub fn replay(transcript: &Transcript, addr: SocketAddr, opts: ReplayOptions, budget: Duration) -> bool {
    let until = Instant::now() + budget;
    let client: Vec<&[u8]> = transcript
        .records
        .iter()
        .filter(|r| r.direction == Direction::ClientToServer)
        .map(|r| &r.bytes[..])
        .collect();
    match opts.transport {
        Transport::Tcp => {
            let connect = || TcpStream::connect_timeout(&addr, budget.max(Duration::from_millis(1)));
            let Ok(mut s) = connect().or_else(|_| connect()) else {
                return false;
            };
            let _ = s.set_nodelay(true);
            let _ = s.set_write_timeout(Some(budget.max(Duration::from_millis(1))));
            for bytes in client {
                if s.write_all(bytes).is_err() {
                    break;
                }
            }
            let _ = s.shutdown(Shutdown::Write);
            drain(&mut s, until, opts.reply_timeout);
            true
        }
        Transport::Udp => {
            let Ok(s) = UdpSocket::bind(("127.0.0.1", 0)) else {
                return false;
            };
            if s.connect(addr).is_err() {
                return false;
            }
            for bytes in client {
                let _ = s.send(bytes);
            }
            let mut buf = vec![0u8; 8192];
            let _ = s.set_read_timeout(Some(opts.reply_timeout));
            while Instant::now() < until && s.recv(&mut buf).is_ok() {}
            true
        }
    }
}

fn drain(s: &mut TcpStream, until: Instant, per_read: Duration) {
    let mut buf = [0u8; 4096];
    loop {
        let left = until.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return;
        }
        let _ = s.set_read_timeout(Some(left.min(per_read)));
        match s.read(&mut buf) {
            Ok(0) => return,
            Ok(_) => continue,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => return,
        }
    }
}

/// Corpus, novelty and crash state of one baseline campaign.
#[derive(Debug)]
pub struct ReplayFuzzer {
    corpus: Vec<Transcript>,
    novelty: NoveltyIndex,
    crashes: BTreeMap<BucketKey, BaselineCrash>,
    crash_order: Vec<BucketKey>,
    reached: Vec<u8>,
    opts: ReplayOptions,
    clock: u64,
}

impl ReplayFuzzer {
    pub fn new(seed_transcript: Transcript, opts: ReplayOptions) -> Self {
        let novelty = NoveltyIndex::new();
        let size = novelty.len();
        Self {
            corpus: vec![seed_transcript],
            novelty,
            crashes: BTreeMap::new(),
            crash_order: Vec::new(),
            reached: vec![0; size],
            opts,
            clock: 0,
        }
    }

    pub fn corpus(&self) -> &[Transcript] {
        &self.corpus
    }

    pub fn novelty(&self) -> &NoveltyIndex {
        &self.novelty
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn crashes(&self) -> impl Iterator<Item = &BaselineCrash> {
        self.crash_order.iter().map(|k| &self.crashes[k])
    }

    /// Cells covered by any run so far, discarded ones included.
    pub fn reached_cells(&self) -> impl Iterator<Item = u32> + '_ {
        self.reached
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, _)| i as u32)
    }

    fn mutate<R: Rng + ?Sized>(&self, parent: usize, rng: &mut R) -> (Transcript, Option<usize>) {
        let mut child = self.corpus[parent].clone();
        let candidates: Vec<usize> = child
            .client_records()
            .filter(|&i| !child.records[i].bytes.is_empty())
            .collect();
        if candidates.is_empty() {
            return (child, None);
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        havoc(&mut child.records[pick].bytes, rng);
        (child, Some(pick))
    }

    /// Runs `transcript` unchanged, counting it as an iteration.
    pub fn replay_verbatim(
        &mut self,
        orch: &mut Orchestrator,
        target: &PeerSpec,
        parent: usize,
    ) -> Result<ReplayReport, OrchestratorError> {
        let t = self.corpus[parent].clone();
        self.execute(orch, target, t, parent, None)
    }

    pub fn replay_fuzz_one<R: Rng + ?Sized>(
        &mut self,
        orch: &mut Orchestrator,
        target: &PeerSpec,
        rng: &mut R,
    ) -> Result<ReplayReport, OrchestratorError> {
        let parent = rng.gen_range(0..self.corpus.len());
        let (child, mutated) = self.mutate(parent, rng);
        self.execute(orch, target, child, parent, mutated)
    }

    fn execute(
        &mut self,
        orch: &mut Orchestrator,
        target: &PeerSpec,
        child: Transcript,
        parent: usize,
        mutated_record: Option<usize>,
    ) -> Result<ReplayReport, OrchestratorError> {
        self.clock += 1;
        let opts = self.opts;
        let mut connected = true;
        let mut client = |addr: SocketAddr, budget: Duration| {
            connected = replay(&child, addr, opts, budget);
        };
        let record = orch.run_inline(target, &mut client)?;
        let outcome = record.outcome;
        for (dst, &src) in self.reached.iter_mut().zip(outcome.coverage.cells()) {
            *dst = (*dst).max(src);
        }
        let mut novel = 0;
        let mut admitted = false;
        match outcome.verdict {
            Verdict::TargetCrash => {
                let evidence = outcome.crash_evidence.unwrap_or_default();
                let key = dedup_key(&evidence.frames);
                match self.crashes.get_mut(&key) {
                    Some(c) => c.count += 1,
                    None => {
                        self.crash_order.push(key.clone());
                        self.crashes.insert(
                            key.clone(),
                            BaselineCrash {
                                bucket_key: key,
                                evidence,
                                transcript: child.clone(),
                                first_seen: self.clock,
                                count: 1,
                            },
                        );
                    }
                }
            }
            Verdict::Timeout => {}
            _ => {
                let obs = self.novelty.observe(&outcome.coverage);
                novel = obs.novel_cells.len();
                if obs.is_novel && mutated_record.is_some() {
                    self.corpus.push(child);
                    admitted = true;
                }
            }
        }
        Ok(ReplayReport {
            iteration: self.clock,
            parent,
            mutated_record,
            verdict: outcome.verdict,
            novel_cells: novel,
            admitted,
            failed: !connected,
            corpus_len: self.corpus.len(),
            crash_buckets: self.crashes.len(),
            novel_cells_total: self.novelty.cells_seen(),
        })
    }
}
