#![allow(dead_code)]

use std::path::{Path, PathBuf};

use weirdpeer::config::{BaselineSection, CampaignConfig, CampaignMode, CampaignSection, TransportName};
use weirdpeer::orchestrator::{PeerSpec, Role, Side, Timeouts};

pub fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_weirdpeer-fixture"))
}

pub fn server_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_tinychat-server"))
}

pub fn client_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_tinychat-client"))
}

pub fn cli_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_weirdpeer"))
}

pub fn fixture_server(mode: &str, extra: &[&str]) -> PeerSpec {
    let mut args = vec![mode, "--port", "{port}"];
    args.extend_from_slice(extra);
    PeerSpec::new(fixture(), Role::TargetPeer, Side::Server).args(args)
}

pub fn micro_client(extra: &[&str]) -> PeerSpec {
    let mut args = vec!["micro", "--port", "{port}"];
    args.extend_from_slice(extra);
    PeerSpec::new(fixture(), Role::WeirdPeer, Side::Client).args(args)
}

pub fn tinychat_server(extra: &[&str]) -> PeerSpec {
    let mut args = vec!["--port", "{port}"];
    args.extend_from_slice(extra);
    PeerSpec::new(server_bin(), Role::TargetPeer, Side::Server).args(args)
}

pub fn tinychat_client(extra: &[&str]) -> PeerSpec {
    let mut args = vec!["--port", "{port}"];
    args.extend_from_slice(extra);
    PeerSpec::new(client_bin(), Role::WeirdPeer, Side::Client).args(args)
}

pub fn quick() -> Timeouts {
    Timeouts {
        run_ms: 1000,
        drain_ms: 100,
        ready_grace_ms: 300,
    }
}

/// Whether `pid` still names a live (non-zombie) process.
pub fn alive(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => stat
            .rsplit(')')
            .next()
            .and_then(|rest| rest.split_whitespace().next())
            .is_some_and(|state| state != "Z" && state != "X"),
        Err(_) => false,
    }
}

/// TinyChat campaign with the weird client against the server.
pub fn tinychat_config(
    mode: CampaignMode,
    seed: u64,
    output: &Path,
    weird: &[&str],
    target: &[&str],
) -> CampaignConfig {
    CampaignConfig {
        campaign: CampaignSection {
            mode,
            seed,
            iterations: None,
            wall_time_s: None,
            workers: 1,
            output: output.into(),
            identity_runs: 5,
            transcript_flag: Some("--transcript".into()),
        },
        scheduler: Default::default(),
        orchestrator: Timeouts::default(),
        weird: Some(tinychat_client(weird)),
        target: tinychat_server(target),
        baseline: None,
    }
}

pub fn baseline_section(transcript: &Path) -> BaselineSection {
    BaselineSection {
        transcript: transcript.into(),
        transport: TransportName::Tcp,
        reply_timeout_ms: 50,
    }
}

pub fn write_config(dir: &Path, cfg: &CampaignConfig) -> PathBuf {
    let path = dir.join("campaign.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}
