//! `weirdpeer` command line.
//!
//! Exit status: 0 success, 1 negative result (unstable identity runs, crash
//! not reproduced), 2 bad configuration or usage, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use weirdpeer_core::stats::{merge_series, StatsRow, MERGED_HEADER};

use crate::config::{CampaignConfig, CampaignMode, ConfigError};
use crate::output::{read_stats, OutputDir};
use crate::runner::{self, RunError};

#[derive(Debug, Parser)]
#[command(name = "weirdpeer", version, about = "Fault-injection fuzzer for network peers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the campaign described by a configuration file.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        wall_time_s: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Crash input, for `mode = "reproduce"`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Re-run a saved crash input against the configured peers.
    Reproduce {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Merge stats.csv files from several campaigns into median and
    /// 17th/83rd percentile curves.
    Stats {
        /// Campaign output directories or stats.csv files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "novel-cells")]
        metric: Metric,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Capture one unfaulted session transcript, the baseline's seed input.
    Record {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    NovelCells,
    Queue,
    CrashBuckets,
}

impl Metric {
    fn of(self, row: &StatsRow) -> f64 {
        match self {
            Metric::NovelCells => row.novel_cells_total as f64,
            Metric::Queue => row.queue_len as f64,
            Metric::CrashBuckets => row.crash_buckets as f64,
        }
    }
}

const EXIT_NEGATIVE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn fail(e: &dyn std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("weirdpeer: {e}");
    ExitCode::from(code)
}

fn run_error(e: RunError) -> ExitCode {
    let code = match e {
        RunError::Config(_) | RunError::Input { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    };
    fail(&e, code)
}

fn load(path: &Path) -> Result<CampaignConfig, ExitCode> {
    let cfg = CampaignConfig::load(path).map_err(|e| fail(&e, EXIT_CONFIG))?;
    cfg.validate().map_err(|e| fail(&e, EXIT_CONFIG))?;
    Ok(cfg)
}

pub fn main_with(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run {
            config,
            seed,
            iterations,
            wall_time_s,
            workers,
            output,
            input,
        } => {
            let mut cfg = match CampaignConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e, EXIT_CONFIG),
            };
            let c = &mut cfg.campaign;
            c.seed = seed.unwrap_or(c.seed);
            c.iterations = iterations.or(c.iterations);
            c.wall_time_s = wall_time_s.or(c.wall_time_s);
            c.workers = workers.unwrap_or(c.workers);
            c.output = output.unwrap_or_else(|| c.output.clone());
            if let Err(e) = cfg.validate() {
                return fail(&e, EXIT_CONFIG);
            }
            run(&cfg, input)
        }
        Command::Reproduce { config, input, runs } => match load(&config) {
            Ok(cfg) => reproduce(&cfg, input, runs),
            Err(code) => code,
        },
        Command::Stats { inputs, metric, out } => stats(&inputs, metric, out),
        Command::Record { config, out } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let work = std::env::temp_dir().join(format!("weirdpeer-record-{}", std::process::id()));
            let result = runner::record_transcript(&cfg, &work, &out);
            let _ = std::fs::remove_dir_all(&work);
            match result {
                Ok(t) => {
                    println!("recorded {} records to {}", t.records.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => run_error(e),
            }
        }
    }
}

fn run(cfg: &CampaignConfig, input: Option<PathBuf>) -> ExitCode {
    let out = match OutputDir::create(&cfg.campaign.output) {
        Ok(o) => o,
        Err(e) => return fail(&e, EXIT_RUNTIME),
    };
    match cfg.campaign.mode {
        CampaignMode::Fault => match runner::fault_campaign(cfg, &out, None) {
            Ok(r) => {
                let c = &r.campaign;
                println!(
                    "runs {} queue {} crash buckets {} novel cells {}",
                    c.runs(),
                    c.queue().len(),
                    c.crashes().len(),
                    c.novelty().cells_seen()
                );
                ExitCode::SUCCESS
            }
            Err(e) => run_error(e),
        },
        CampaignMode::Baseline => match runner::baseline_campaign(cfg, &out, None) {
            Ok(r) => {
                println!(
                    "runs {} corpus {} crash buckets {} novel cells {}",
                    r.fuzzer.clock(),
                    r.fuzzer.corpus().len(),
                    r.fuzzer.crashes().count(),
                    r.fuzzer.novelty().cells_seen()
                );
                ExitCode::SUCCESS
            }
            Err(e) => run_error(e),
        },
        CampaignMode::IdentityCheck => match runner::identity_check(cfg, &out) {
            Ok(r) => {
                let stable = r.stable();
                println!("{}", if stable { "stable" } else { "unstable" });
                if !stable {
                    println!("verdicts {:?}", r.verdicts);
                    println!("differing cells {:?}", r.differing_cells);
                    if r.transcripts_equal == Some(false) {
                        println!("transcripts differ");
                    }
                }
                if stable {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_NEGATIVE)
                }
            }
            Err(e) => run_error(e),
        },
        CampaignMode::Reproduce => match input {
            Some(input) => reproduce(cfg, input, cfg.campaign.identity_runs),
            None => fail(
                &ConfigError::Invalid {
                    field: "input",
                    reason: "reproduce mode needs --input".into(),
                },
                EXIT_CONFIG,
            ),
        },
    }
}

fn reproduce(cfg: &CampaignConfig, input: PathBuf, runs: usize) -> ExitCode {
    let work = cfg.campaign.output.join("work").join("reproduce");
    match runner::reproduce(cfg, &input, &work, runs) {
        Ok(r) => {
            println!("crashed {}/{} matched {}/{}", r.crashed, r.runs, r.matched, r.runs);
            if let Some(k) = &r.expected {
                println!("expected key {k}");
            }
            if let Some(h) = &r.hint {
                println!("hint: {h}");
            }
            if r.reproduced() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NEGATIVE)
            }
        }
        Err(e) => run_error(e),
    }
}

fn stats(inputs: &[PathBuf], metric: Metric, out: Option<PathBuf>) -> ExitCode {
    let mut series = Vec::with_capacity(inputs.len());
    for path in inputs {
        let file = if path.is_dir() {
            path.join("stats.csv")
        } else {
            path.clone()
        };
        match read_stats(&file) {
            Ok(rows) => series.push(rows.iter().map(|r| (r.iteration, metric.of(r))).collect()),
            Err(e) => return fail(&e, EXIT_CONFIG),
        }
    }
    let mut text = String::from(MERGED_HEADER);
    text.push('\n');
    for row in merge_series(&series) {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    let written = match out {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e, EXIT_RUNTIME),
    }
}
