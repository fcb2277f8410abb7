//! Supervised exchanges between real peer processes.

mod common;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::time::{Duration, Instant};

use common::*;
use weirdpeer::env;
use weirdpeer::executor::PeerExecutor;
use weirdpeer::fixture::{micro_site, micro_sites, LOOP_BOUNDS, VALUE64, VALUE8, WIDTHS};
use weirdpeer::orchestrator::{EventKind, Orchestrator, PortLease, Role, Timeouts};
use weirdpeer::testbed::{witness, Bug};
use weirdpeer_core::control::ControlMessage;
use weirdpeer_core::program::stream_len_for;
use weirdpeer_core::{FaultProgram, Manifest, Mode, ProgramEntry, Verdict};

fn orch(dir: &tempfile::TempDir) -> Orchestrator {
    Orchestrator::new(dir.path(), quick()).unwrap()
}

#[test]
fn clean_exchange_orders_ready_before_client() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = orch(&dir);
    let r = o
        .run_once(&micro_client(&[]), &[], &fixture_server("sink", &[]))
        .unwrap();
    assert_eq!(r.outcome.verdict, Verdict::CleanExit);
    assert!(!r.client_preceded_ready(Role::WeirdPeer));
    let kinds: Vec<&EventKind> = r.events.iter().map(|e| &e.kind).collect();
    assert!(kinds
        .iter()
        .any(|k| matches!(k, EventKind::Message(ControlMessage::Ready { port, .. }) if *port == r.port)));
    assert!(kinds
        .iter()
        .any(|k| matches!(k, EventKind::Message(ControlMessage::Connected))));
    assert!(r.outcome.ready_latency_ms.is_some());
    assert!(
        r.outcome.coverage.count_covered() > 0,
        "sink hits its location on the byte it reads"
    );
}

#[test]
fn silent_server_gets_the_grace_period() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = orch(&dir);
    let started = Instant::now();
    let r = o
        .run_once(&micro_client(&[]), &[], &fixture_server("sink", &["--no-ready"]))
        .unwrap();
    assert_eq!(r.outcome.verdict, Verdict::CleanExit);
    assert!(started.elapsed() >= Duration::from_millis(quick().ready_grace_ms));
    assert!(r.outcome.ready_latency_ms.is_none());
}

#[test]
fn lingering_server_is_terminated_and_reaped() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = orch(&dir);
    for extra in [&[][..], &["--ignore-term"][..]] {
        let r = o
            .run_once(&micro_client(&[]), &[], &fixture_server("hang", extra))
            .unwrap();
        assert_eq!(r.outcome.verdict, Verdict::CleanExit);
        assert!(r.signalled(Role::TargetPeer));
        assert!(r.pids.iter().all(|&p| !alive(p)), "no orphans left");
    }
}

#[test]
fn crashing_server_yields_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = orch(&dir);
    let r = o
        .run_once(&micro_client(&[]), &[], &fixture_server("crash", &[]))
        .unwrap();
    assert_eq!(r.outcome.verdict, Verdict::TargetCrash);
    let ev = r.outcome.crash_evidence.unwrap();
    assert_eq!(ev.bug.as_deref(), Some("FX1"));
    assert_eq!(ev.frames, ["fixture_crash", "serve"]);
    assert!(r.outcome.coverage.count_covered() > 0);

    let target = tinychat_server(&["--arm", "B1"]);
    let weird = tinychat_client(&[]);
    let program = witness(Bug::B1LenCopy).unwrap();
    let mut exec = PeerExecutor::new(dir.path().join("w"), quick(), weird, target).unwrap();
    let r = exec.run(&program, Mode::Faulting).unwrap();
    assert_eq!(r.outcome.verdict, Verdict::TargetCrash);
    let ev = r.outcome.crash_evidence.unwrap();
    assert_eq!(ev.bug.as_deref(), Some("B1_len_copy"));
    assert_eq!(ev.frames[0], "copy_payload");
}

#[test]
fn deadlocked_pair_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let t = Timeouts { run_ms: 300, ..quick() };
    let mut o = Orchestrator::new(dir.path(), t).unwrap();
    let client =
        weirdpeer::orchestrator::PeerSpec::new(fixture(), Role::WeirdPeer, weirdpeer::orchestrator::Side::Client)
            .args(["idle", "--port", "{port}"]);
    let started = Instant::now();
    let r = o.run_once(&client, &[], &fixture_server("hang", &[])).unwrap();
    assert_eq!(r.outcome.verdict, Verdict::Timeout);
    assert!(started.elapsed() < Duration::from_millis(300 + 1000));
    assert!(r.pids.iter().all(|&p| !alive(p)));
}

#[test]
fn port_leases_are_exclusive() {
    let leases: Vec<PortLease> = (0..32).map(|_| PortLease::acquire().unwrap()).collect();
    let ports: BTreeSet<u16> = leases.iter().map(PortLease::port).collect();
    assert_eq!(ports.len(), leases.len());
}

#[test]
fn micro_peer_reports_manifest_and_hits() {
    let dir = tempfile::tempdir().unwrap();
    let mut exec = PeerExecutor::new(dir.path(), quick(), micro_client(&[]), fixture_server("sink", &[])).unwrap();
    let manifest = exec.fetch_manifest().unwrap();
    assert_eq!(manifest, Manifest::from_sites(micro_sites()));
    let r = exec.run(&FaultProgram::empty(), Mode::Counting).unwrap();
    let hits = r.outcome.hits.unwrap();
    for (i, &bound) in LOOP_BOUNDS.iter().enumerate() {
        for j in 0..WIDTHS.len() {
            assert_eq!(hits[&micro_site(i, j)], u64::from(bound));
        }
    }
}

#[test]
fn faults_reach_the_peer_process() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("micro.log");
    let log_arg = log.to_string_lossy().into_owned();
    let weird = micro_client(&["--log", &log_arg]);
    let mut exec = PeerExecutor::new(dir.path(), quick(), weird, fixture_server("sink", &[])).unwrap();
    // Bound 3: branch flips only on the second hit; the 8-bit value is
    // XORed with 0xFF once, then the stream runs dry.
    let program = FaultProgram::from_entries(vec![
        ProgramEntry::new(micro_site(1, 0), vec![0b010]),
        ProgramEntry::new(micro_site(1, 1), vec![0xFF]),
        ProgramEntry::new(micro_site(0, 2), 1u64.to_le_bytes().to_vec()),
    ]);
    let r = exec.run(&program, Mode::Faulting).unwrap();
    assert_eq!(r.outcome.verdict, Verdict::CleanExit);
    let text = std::fs::read_to_string(&log).unwrap();
    let value = |site: u32, k: u32| -> u64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{site} {k} "))).unwrap();
        u64::from_str_radix(line.rsplit(' ').next().unwrap().trim_start_matches("0x"), 16).unwrap()
    };
    let branch: Vec<u64> = (0..3).map(|k| value(micro_site(1, 0), k)).collect();
    assert_eq!(branch, [1, 0, 1]);
    assert_eq!(value(micro_site(1, 1), 0), VALUE8 ^ 0xFF);
    assert_eq!(value(micro_site(1, 1), 1), VALUE8);
    assert_eq!(value(micro_site(0, 2), 0), VALUE64 ^ 1);
}

#[test]
fn calibration_sizes_streams_by_hits_and_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut exec = PeerExecutor::new(dir.path(), quick(), micro_client(&[]), fixture_server("sink", &[])).unwrap();
    let manifest = exec.fetch_manifest().unwrap();
    let skeleton = FaultProgram::from_entries(
        manifest
            .iter()
            .map(|s| ProgramEntry::new(s.site_id, Vec::new()))
            .collect(),
    );
    let cal = weirdpeer_core::campaign::calibrate(&skeleton, &manifest, &mut exec)
        .unwrap()
        .unwrap();
    for (i, &bound) in LOOP_BOUNDS.iter().enumerate() {
        for (j, &width) in WIDTHS.iter().enumerate() {
            let site = micro_site(i, j);
            let want = (u64::from(bound) * u64::from(width)).div_ceil(8) as usize;
            assert_eq!(cal.entry(site).unwrap().stream.len(), want, "site {site}");
            assert_eq!(stream_len_for(cal.calibration[&site], width), want);
        }
    }
}

#[test]
fn testbed_identity_runs_are_clean_over_udp_and_tcp() {
    let dir = tempfile::tempdir().unwrap();
    for transport in ["tcp", "udp"] {
        let extra = ["--transport", transport, "--seed", "5"];
        let mut exec =
            PeerExecutor::new(dir.path(), quick(), tinychat_client(&extra), tinychat_server(&extra)).unwrap();
        let r = exec.run(&FaultProgram::empty(), Mode::Off).unwrap();
        assert_eq!(r.outcome.verdict, Verdict::CleanExit, "{transport}");
        if transport == "udp" {
            assert!(r.signalled(Role::TargetPeer));
        }
    }
}

#[test]
fn fatal_pre_connect_fault_is_classified() {
    let dir = tempfile::tempdir().unwrap();
    let mut exec = PeerExecutor::new(dir.path(), quick(), tinychat_client(&[]), tinychat_server(&[])).unwrap();
    let program = FaultProgram::from_entries(vec![ProgramEntry::new(
        weirdpeer::testbed::site::CFG_MAGIC,
        vec![1, 0, 0, 0],
    )]);
    let r = exec.run(&program, Mode::Faulting).unwrap();
    assert_eq!(r.outcome.verdict, Verdict::WeirdPeerCrashPreConnect);
}

#[test]
fn control_fd_is_named_in_the_environment() {
    // Peers spawned outside the orchestrator simply have no channel.
    assert!(std::env::var_os(env::CONTROL_FD).is_none());
    let extra: Vec<(String, OsString)> = vec![(env::MODE.into(), "off".into())];
    let dir = tempfile::tempdir().unwrap();
    let mut o = orch(&dir);
    let r = o
        .run_once(&micro_client(&[]), &extra, &fixture_server("sink", &[]))
        .unwrap();
    assert!(r
        .events
        .iter()
        .any(|e| e.role == Role::WeirdPeer && matches!(e.kind, EventKind::Message(ControlMessage::Connecting))));
}
