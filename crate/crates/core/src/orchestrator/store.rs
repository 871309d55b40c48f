//! Run directory layout, manifest and single-writer lock.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::Usd;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HYPOTHESES_FILE: &str = "hypotheses.jsonl";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn hypotheses(&self) -> PathBuf {
        self.root.join(HYPOTHESES_FILE)
    }

    pub fn iteration_dir(&self, index: u32) -> PathBuf {
        self.root.join(format!("iteration_{index}"))
    }

    pub fn file(&self, index: u32, name: &str) -> PathBuf {
        self.iteration_dir(index).join(name)
    }
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Always appends one newline, so reading back and dropping the last
/// byte restores `text` exactly.
pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    write_atomic(path, format!("{text}\n").as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    /// Global, strictly increasing across the run.
    pub seq: u64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub index: u32,
    pub status: RunStatus,
    pub stages: Vec<StageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub hypothesis_count: usize,
    pub cost: Usd,
}

impl IterationEntry {
    pub fn new(index: u32) -> Self {
        IterationEntry {
            index,
            status: RunStatus::InProgress,
            stages: Vec::new(),
            failed_stage: None,
            error: None,
            hypothesis_count: 0,
            cost: Usd::ZERO,
        }
    }

    /// Every file a completed iteration must have on disk.
    pub fn required_files(&self) -> Vec<String> {
        let mut files: Vec<String> = self.stages.iter().flat_map(|s| s.files.iter().cloned()).collect();
        files.push(EXCHANGES_FILE.to_string());
        files.sort();
        files.dedup();
        files
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub status: RunStatus,
    pub iterations_planned: u32,
    pub iterations: Vec<IterationEntry>,
    pub total_cost: Usd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Manifest {
    pub fn new(run_id: impl Into<String>, iterations_planned: u32) -> Self {
        let now = Utc::now();
        Manifest {
            run_id: run_id.into(),
            created_at: now,
            updated_at: now,
            status: RunStatus::InProgress,
            iterations_planned,
            iterations: Vec::new(),
            total_cost: Usd::ZERO,
            failure: None,
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.iterations
            .iter()
            .flat_map(|i| i.stages.iter().map(|s| s.seq))
            .max()
            .map_or(1, |s| s + 1)
    }

    pub fn completed(&self) -> impl Iterator<Item = &IterationEntry> {
        self.iterations.iter().filter(|i| i.status == RunStatus::Completed)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&mut self, path: &Path) -> io::Result<()> {
        self.updated_at = Utc::now();
        write_json(path, self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LockError {
    #[error("run directory {dir} is locked by process {pid}")]
    Held { dir: PathBuf, pid: u32 },
    #[error("cannot lock {dir}: {source}")]
    Io {
        dir: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Exclusive writer lock on a run directory, released on drop. A lock left
/// by a process that no longer exists is taken over.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn process_alive(pid: u32) -> bool {
    let proc_root = Path::new("/proc");
    if !proc_root.is_dir() {
        return true;
    }
    proc_root.join(pid.to_string()).exists()
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, LockError> {
        let path = dir.join(LOCK_FILE);
        let io_err = |source| LockError::Io {
            dir: dir.to_path_buf(),
            source,
        };
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(io_err)?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if process_alive(pid) => {
                            return Err(LockError::Held {
                                dir: dir.to_path_buf(),
                                pid,
                            })
                        }
                        _ => fs::remove_file(&path).map_err(io_err)?,
                    }
                }
                Err(e) => return Err(io_err(e)),
            }
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
