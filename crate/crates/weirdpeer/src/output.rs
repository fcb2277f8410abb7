//! Campaign output directory: corpus, crashes, stats and summary.
//!
//! ```text
//! <output>/
//!   config.toml          effective configuration
//!   queue/               one fault program (or transcript) per queue entry
//!   crashes/             representative input per crash bucket, plus
//!                        `<name>.txt` with bug id, bucket key and frames
//!   stats.csv            one row per iteration
//!   summary.txt
//!   work/w<N>/           per-worker scratch files
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use weirdpeer_core::stats::{StatsRow, CSV_HEADER};
use weirdpeer_core::triage::BucketKey;

#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for sub in ["queue", "crashes", "work"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn queue_dir(&self) -> PathBuf {
        self.root.join("queue")
    }

    pub fn crash_dir(&self) -> PathBuf {
        self.root.join("crashes")
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn work_dir(&self, worker: usize) -> PathBuf {
        self.root.join("work").join(format!("w{worker}"))
    }

    /// Empties the queue and crash directories.
    pub fn reset_corpus(&self) -> io::Result<()> {
        for dir in [self.queue_dir(), self.crash_dir()] {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::create_dir_all(&dir)?;
        }
        Ok(())
    }

    pub fn write_stats(&self, rows: &[StatsRow]) -> io::Result<()> {
        let mut text = String::with_capacity(32 * (rows.len() + 1));
        text.push_str(CSV_HEADER);
        text.push('\n');
        for r in rows {
            text.push_str(&r.to_csv());
            text.push('\n');
        }
        fs::write(self.stats_path(), text)
    }

    pub fn write_summary(&self, lines: &[(&str, String)]) -> io::Result<()> {
        let mut text = String::new();
        for (k, v) in lines {
            let _ = writeln!(text, "{k} {v}");
        }
        fs::write(self.summary_path(), text)
    }
}

/// Crash sidecar contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub bug: Option<String>,
    pub key: BucketKey,
    pub frames: Vec<String>,
}

impl Sidecar {
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(bug) = &self.bug {
            let _ = writeln!(out, "bug {bug}");
        }
        let _ = writeln!(out, "key {}", self.key);
        for f in &self.frames {
            let _ = writeln!(out, "frame {f}");
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut bug = None;
        let mut key = None;
        let mut frames = Vec::new();
        for line in text.lines() {
            if let Some(b) = line.strip_prefix("bug ") {
                bug = Some(b.to_string());
            } else if let Some(k) = line.strip_prefix("key ") {
                key = Some(BucketKey::parse(k)?);
            } else if let Some(f) = line.strip_prefix("frame ") {
                frames.push(f.to_string());
            } else if !line.trim().is_empty() {
                return None;
            }
        }
        Some(Self { bug, key: key?, frames })
    }

    pub fn path_for(input: &Path) -> PathBuf {
        let mut name = input.file_name().unwrap_or_default().to_os_string();
        name.push(".txt");
        input.with_file_name(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StatsFileError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: not a stats CSV ({reason})")]
    Schema { path: PathBuf, reason: String },
}

pub fn read_stats(path: &Path) -> Result<Vec<StatsRow>, StatsFileError> {
    let text = fs::read_to_string(path).map_err(|source| StatsFileError::Read {
        path: path.into(),
        source,
    })?;
    let schema = |reason: String| StatsFileError::Schema {
        path: path.into(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        Some(h) => return Err(schema(format!("unexpected header {h:?}"))),
        None => return Err(schema("empty file".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| StatsRow::parse(l).ok_or_else(|| schema(format!("bad row at line {}", i + 2))))
        .collect()
}
