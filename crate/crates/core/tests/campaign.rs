//! Campaign state machine against an in-memory simulated peer pair.

use std::convert::Infallible;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weirdpeer_core::campaign::{calibrate, Campaign, ExecMode, Executor, MutationKind, SchedulerConfig};
use weirdpeer_core::program::stream_len_for;
use weirdpeer_core::{
    CoverageMap, CrashEvidence, FaultEngine, FaultProgram, Manifest, Mode, ProgramEntry, RunOutcome, SiteDescriptor,
    Verdict,
};

const MAP: usize = 1024;
const MAGIC: u64 = 0x7443_6831;

mod site {
    pub const MAGIC: u32 = 1;
    pub const GATE: u32 = 2;
    pub const BYTE: u32 = 3;
    pub const ARM: u32 = 4;
    pub const DORMANT: u32 = 5;
    pub const LEN: u32 = 6;
}

fn sites() -> Vec<SiteDescriptor> {
    vec![
        SiteDescriptor::value_load(site::MAGIC, 32, "magic").unwrap(),
        SiteDescriptor::branch(site::GATE, "gate"),
        SiteDescriptor::value_store(site::BYTE, 8, "byte").unwrap(),
        SiteDescriptor::switch(site::ARM, "arm"),
        SiteDescriptor::branch(site::DORMANT, "never"),
        SiteDescriptor::value_store(site::LEN, 16, "len").unwrap(),
    ]
}

/// Weird peer and target folded into one function. Pre-connect the peer
/// checks a magic value; post-connect its faulted values steer the target.
#[derive(Default)]
struct Sim {
    calls: u64,
}

impl Sim {
    fn session(&mut self, program: &FaultProgram, mode: ExecMode) -> RunOutcome {
        self.calls += 1;
        let mut engine = FaultEngine::new(match mode {
            ExecMode::Faulting => Mode::Faulting,
            ExecMode::Counting => Mode::Counting,
        });
        for s in sites() {
            engine.register_site(s).unwrap();
        }
        engine.seal();
        engine.load_program(program);
        let h = |id| engine.handle(id).unwrap();
        let mut cov = CoverageMap::with_size(MAP);
        let mut prev = 0;
        let mut edge = |cov: &mut CoverageMap, loc: u32| {
            cov.record_edge(prev, loc);
            prev = loc;
        };
        let finish = |engine: &FaultEngine, verdict, cov| {
            let mut o = RunOutcome::new(verdict, cov);
            if mode == ExecMode::Counting {
                o.hits = Some(engine.record_hits());
            }
            o
        };

        let (hm, hg, hb, ha, hl) = (h(site::MAGIC), h(site::GATE), h(site::BYTE), h(site::ARM), h(site::LEN));
        if engine.apply_value(hm, MAGIC) != MAGIC {
            return finish(&engine, Verdict::WeirdPeerCrashPreConnect, CoverageMap::with_size(MAP));
        }
        edge(&mut cov, 100);
        for i in 0..3 {
            if engine.apply_branch(hg, false) {
                edge(&mut cov, 200 + i);
            }
        }
        for _ in 0..2 {
            let v = engine.apply_value(hb, 0x10);
            edge(&mut cov, 300 + (v % 16) as u32);
        }
        let arm = engine.apply_switch(ha, 0, 4);
        edge(&mut cov, 400 + arm as u32);
        let len = engine.apply_value(hl, 0x0040);
        if len > 0x0fff {
            let mut o = finish(&engine, Verdict::TargetCrash, cov);
            o.crash_evidence = Some(CrashEvidence {
                bug: Some("SIM".into()),
                frames: vec!["copy".into(), "handle".into(), "main".into()],
            });
            return o;
        }
        edge(&mut cov, 500);
        finish(&engine, Verdict::CleanExit, cov)
    }
}

impl Executor for Sim {
    type Error = Infallible;

    fn execute(&mut self, program: &FaultProgram, mode: ExecMode) -> Result<RunOutcome, Infallible> {
        Ok(self.session(program, mode))
    }
}

fn campaign() -> Campaign {
    Campaign::with_map_size(SchedulerConfig::default(), Manifest::from_sites(sites()), MAP)
}

fn started(seed: u64) -> (Campaign, Sim, ChaCha8Rng) {
    let mut c = campaign();
    let mut sim = Sim::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    c.establish_baseline(&mut sim).unwrap();
    c.init_queue(&mut sim, &mut rng, None, None).unwrap();
    (c, sim, rng)
}

#[test]
fn baseline_records_site_hits() {
    let mut c = campaign();
    let mut sim = Sim::default();
    c.establish_baseline(&mut sim).unwrap();
    let hits = c.site_hits();
    assert_eq!(hits[&site::MAGIC], 1);
    assert_eq!(hits[&site::GATE], 3);
    assert_eq!(hits[&site::BYTE], 2);
    assert_eq!(hits[&site::ARM], 1);
    assert_eq!(hits[&site::DORMANT], 0);
    assert_eq!(c.runs(), 1);
    assert!(c.baseline().is_some());
}

#[test]
fn init_skip_lists_fatal_site_and_ignores_dormant_one() {
    let (c, _, _) = started(1);
    assert!(c.queue().skip_list().contains(&site::MAGIC));
    assert!(!c.queue().skip_list().contains(&site::GATE));
    assert!(c.queue().programs().iter().all(|p| !p.contains_site(site::MAGIC)));
    assert!(c.queue().programs().iter().all(|p| !p.contains_site(site::DORMANT)));
    assert!(!c.queue().is_empty());
}

#[test]
fn init_report_accounts_for_every_run() {
    let mut c = campaign();
    let mut sim = Sim::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    c.establish_baseline(&mut sim).unwrap();
    let r = c.init_queue(&mut sim, &mut rng, None, None).unwrap();
    assert_eq!(r.dormant, vec![site::DORMANT]);
    assert_eq!(r.skip_listed, vec![site::MAGIC]);
    assert_eq!(r.pre_connect_crashes[&site::MAGIC], 8);
    // Every site is calibrated once; the five live ones are probed eight times.
    assert_eq!(r.calibration_runs, 6);
    assert_eq!(r.probe_runs, 5 * 8);
    assert_eq!(c.runs(), sim.calls);
}

#[test]
fn probes_are_sized_from_calibration() {
    let (c, _, _) = started(4);
    for p in c.queue().programs() {
        for e in &p.entries {
            let hits = c.site_hits()[&e.site_id];
            let width = c.manifest().width(e.site_id).unwrap();
            assert_eq!(e.stream.len(), stream_len_for(hits, width), "site {}", e.site_id);
        }
    }
}

#[test]
fn interrupted_init_resumes_to_the_same_queue() {
    let (whole, _, _) = started(5);

    let mut c = campaign();
    let mut sim = Sim::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    c.establish_baseline(&mut sim).unwrap();
    let mut resume = None;
    loop {
        let r = c.init_queue(&mut sim, &mut rng, Some(7), resume).unwrap();
        match r.resume {
            Some(cursor) => resume = Some(cursor),
            None => break,
        }
    }
    assert_eq!(c.queue().programs(), whole.queue().programs());
    assert_eq!(c.queue().skip_list(), whole.queue().skip_list());
    assert_eq!(c.runs(), whole.runs());
}

#[test]
fn fuzzing_is_deterministic_under_a_fixed_seed() {
    let run = |seed| {
        let (mut c, mut sim, mut rng) = started(seed);
        let reports: Vec<_> = (0..300).map(|_| c.fuzz_one(&mut sim, &mut rng).unwrap()).collect();
        (reports, c.queue().programs().to_vec())
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11).1, run(12).1);
}

#[test]
fn split_api_matches_fuzz_one() {
    let (mut a, mut sim_a, mut rng_a) = started(21);
    let (mut b, mut sim_b, mut rng_b) = started(21);
    for _ in 0..200 {
        let ra = a.fuzz_one(&mut sim_a, &mut rng_a).unwrap();
        let plan = b.plan(&mut rng_b);
        let outcome = sim_b.session(&plan.child, ExecMode::Faulting);
        let mut commit = b.commit(plan, &outcome);
        if let Some(p) = commit.pending.take() {
            let cal = calibrate(&p.child, b.manifest(), &mut sim_b).unwrap();
            b.admit(p, cal, &mut commit.report);
        }
        assert_eq!(ra, commit.report);
    }
    assert_eq!(a.runs(), b.runs());
    assert_eq!(a.runs(), sim_a.calls);
}

#[test]
fn crashes_are_bucketed_and_counted() {
    let (mut c, mut sim, mut rng) = started(3);
    let mut crashes = 0;
    for _ in 0..2000 {
        let r = c.fuzz_one(&mut sim, &mut rng).unwrap();
        if r.verdict == Verdict::TargetCrash {
            crashes += 1;
        }
    }
    assert!(crashes > 0, "the simulated length overflow is easy to reach");
    assert_eq!(c.crashes().len(), 1);
    let report = c.crashes().iter().next().unwrap();
    assert_eq!(report.bug.as_deref(), Some("SIM"));
    assert!(report.count >= crashes);
    let again = sim.session(&report.representative, ExecMode::Faulting);
    assert_eq!(again.verdict, Verdict::TargetCrash);
}

#[test]
fn queue_invariants_hold_after_fuzzing() {
    let (mut c, mut sim, mut rng) = started(8);
    let mut kinds = std::collections::BTreeSet::new();
    for _ in 0..1500 {
        let r = c.fuzz_one(&mut sim, &mut rng).unwrap();
        kinds.insert(format!("{:?}", r.kind));
        assert_eq!(r.queue_len, c.queue().len());
    }
    for p in c.queue().programs() {
        assert!(!p.has_duplicate_sites());
        assert!(!p.contains_site(site::MAGIC));
        assert!(!p.novel_cells.is_empty());
        for id in p.site_ids() {
            assert!(
                p.calibration.contains_key(&id),
                "admitted program calibrated for site {id}"
            );
        }
    }
    assert!(c.queue().favored().iter().all(|&i| i < c.queue().len()));
    assert!(kinds.contains(&format!("{:?}", MutationKind::Stream)));
    assert!(kinds.contains(&format!("{:?}", MutationKind::Extend)));
    assert_eq!(c.runs(), sim.calls);
}

#[test]
fn novel_coverage_grows_the_queue() {
    let (mut c, mut sim, mut rng) = started(2);
    let before = c.novelty().cells_seen();
    for _ in 0..500 {
        c.fuzz_one(&mut sim, &mut rng).unwrap();
    }
    assert!(c.novelty().cells_seen() > before);
}

#[test]
fn empty_queue_plans_single_site_probes() {
    let mut c = campaign();
    let mut sim = Sim::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.establish_baseline(&mut sim).unwrap();
    let plan = c.plan(&mut rng);
    assert_eq!(plan.kind, MutationKind::Probe);
    assert_eq!(plan.child.entries.len(), 1);
    assert_ne!(plan.child.entries[0].site_id, site::DORMANT);
}

#[test]
fn failed_calibration_drops_the_child() {
    let mut c = campaign();
    let mut sim = Sim::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.establish_baseline(&mut sim).unwrap();
    let plan = c.plan(&mut rng);
    let mut commit = c.commit(
        plan,
        &sim.session(
            &FaultProgram::from_entries(vec![ProgramEntry::new(site::BYTE, vec![0xff, 0])]),
            ExecMode::Faulting,
        ),
    );
    if let Some(p) = commit.pending.take() {
        c.admit(p, None, &mut commit.report);
        assert!(!commit.report.admitted);
        assert!(c.queue().is_empty());
    }
}
