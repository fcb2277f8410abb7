//! Campaign configuration file (TOML).
//!
//! ```toml
//! [campaign]
//! mode = "fault"            # fault | baseline | identity-check | reproduce
//! seed = 7
//! iterations = 2000         # and/or wall_time_s
//! workers = 1
//! output = "out"
//!
//! [scheduler]               # optional, defaults shown
//! p_favored = 0.8
//! stream_weight = 6
//! splice_weight = 1
//! extend_weight = 1
//! probes_per_site = 8
//! crash_threshold = 6
//!
//! [orchestrator]            # optional
//! run_ms = 1000
//! drain_ms = 200
//! ready_grace_ms = 500
//!
//! [weird]
//! path = "target/debug/tinychat-client"
//! args = ["--port", "{port}", "--seed", "1"]
//! role = "weird_peer"
//! side = "client"
//!
//! [target]
//! path = "target/debug/tinychat-server"
//! args = ["--port", "{port}", "--seed", "1"]
//! role = "target_peer"
//! side = "server"
//!
//! [baseline]                # baseline mode only
//! transcript = "session.transcript"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weirdpeer_core::campaign::SchedulerConfig;

use crate::orchestrator::{PeerSpec, Role, Timeouts};
use crate::testbed::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CampaignMode {
    Fault,
    Baseline,
    IdentityCheck,
    Reproduce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub mode: CampaignMode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<u64>,
    #[serde(default = "one")]
    pub workers: usize,
    pub output: PathBuf,
    /// Identity runs compared by identity-check.
    #[serde(default = "five")]
    pub identity_runs: usize,
    /// Flag that makes the weird peer write its session transcript; the
    /// path is appended by identity-check and record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_flag: Option<String>,
}

fn one() -> usize {
    1
}

fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub p_favored: f64,
    pub stream_weight: u32,
    pub splice_weight: u32,
    pub extend_weight: u32,
    pub probes_per_site: u32,
    pub crash_threshold: u32,
    pub dormant_divisor: u32,
    pub default_probe_bytes: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerConfig::default().into()
    }
}

impl From<SchedulerConfig> for SchedulerSection {
    fn from(c: SchedulerConfig) -> Self {
        Self {
            p_favored: c.p_favored,
            stream_weight: c.stream_weight,
            splice_weight: c.splice_weight,
            extend_weight: c.extend_weight,
            probes_per_site: c.probes_per_site,
            crash_threshold: c.crash_threshold,
            dormant_divisor: c.dormant_divisor,
            default_probe_bytes: c.default_probe_bytes,
        }
    }
}

impl From<&SchedulerSection> for SchedulerConfig {
    fn from(s: &SchedulerSection) -> Self {
        Self {
            p_favored: s.p_favored,
            stream_weight: s.stream_weight,
            splice_weight: s.splice_weight,
            extend_weight: s.extend_weight,
            probes_per_site: s.probes_per_site,
            crash_threshold: s.crash_threshold,
            dormant_divisor: s.dormant_divisor,
            default_probe_bytes: s.default_probe_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportName {
    Tcp,
    Udp,
}

impl From<TransportName> for Transport {
    fn from(t: TransportName) -> Self {
        match t {
            TransportName::Tcp => Transport::Tcp,
            TransportName::Udp => Transport::Udp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub transcript: PathBuf,
    #[serde(default = "tcp")]
    pub transport: TransportName,
    #[serde(default = "fifty")]
    pub reply_timeout_ms: u64,
}

fn tcp() -> TransportName {
    TransportName::Tcp
}

fn fifty() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign: CampaignSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub orchestrator: Timeouts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weird: Option<PeerSpec>,
    pub target: PeerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSection>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.into(),
                message,
            },
            other => other,
        })
    }

    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        (&self.scheduler).into()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.campaign;
        let needs_budget = matches!(c.mode, CampaignMode::Fault | CampaignMode::Baseline);
        if needs_budget && c.iterations.is_none() && c.wall_time_s.is_none() {
            return Err(invalid("campaign.iterations", "set iterations or wall_time_s"));
        }
        if c.iterations == Some(0) {
            return Err(invalid("campaign.iterations", "must be positive"));
        }
        if c.wall_time_s == Some(0) {
            return Err(invalid("campaign.wall_time_s", "must be positive"));
        }
        if c.workers == 0 {
            return Err(invalid("campaign.workers", "must be positive"));
        }
        if c.identity_runs < 2 {
            return Err(invalid("campaign.identity_runs", "need at least two runs to compare"));
        }
        self.scheduler_config()
            .validate()
            .map_err(|r| invalid("scheduler", r))?;
        let t = &self.orchestrator;
        if t.run_ms == 0 {
            return Err(invalid("orchestrator.run_ms", "must be positive"));
        }
        if self.target.role != Role::TargetPeer {
            return Err(invalid("target.role", "must be target_peer"));
        }
        match (&self.weird, c.mode) {
            (Some(w), _) if w.role != Role::WeirdPeer => return Err(invalid("weird.role", "must be weird_peer")),
            (Some(w), _) if w.side == self.target.side => {
                return Err(invalid("weird.side", "weird and target peers need opposite sides"))
            }
            (None, CampaignMode::Fault | CampaignMode::IdentityCheck | CampaignMode::Reproduce) => {
                return Err(invalid("weird", "this mode needs a weird peer"))
            }
            _ => {}
        }
        if c.mode == CampaignMode::Baseline && self.baseline.is_none() {
            return Err(invalid("baseline", "baseline mode needs a [baseline] section"));
        }
        Ok(())
    }
}
