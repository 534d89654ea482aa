use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A run-relative path and the SHA-256 of its content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a temporary file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write `bytes` under `root/rel` and return its reference.
pub fn put(root: &Path, rel: &str, bytes: &[u8]) -> Result<FileRef> {
    write_atomic(&root.join(rel), bytes)?;
    Ok(FileRef {
        path: rel.to_owned(),
        sha256: sha256_hex(bytes),
    })
}

impl FileRef {
    /// Read the file and check it against the recorded hash.
    pub fn read_verified(&self, root: &Path) -> Result<Vec<u8>> {
        let path = root.join(&self.path);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Corruption {
                path: path.clone(),
                reason: "file listed in the manifest is missing".into(),
            },
            _ => Error::io(&path, e),
        })?;
        let got = sha256_hex(&bytes);
        if got != self.sha256 {
            return Err(Error::Corruption {
                path,
                reason: format!("sha256 {got} does not match manifest {}", self.sha256),
            });
        }
        Ok(bytes)
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        self.read_verified(root).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub subject: String,
    pub format: String,
    pub report: FileRef,
    pub answers: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    /// Model name for evaluation-only runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<FileRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<FileRef>,
    pub cells: Vec<CellRef>,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub alpha: f64,
    /// Directory name under `checkpoints/`, `corpora/` and `reports/`.
    pub label: String,
    pub generations: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub label: String,
    pub generation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub mode: RunMode,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    pub tokenizer_id: String,
    pub tokenizer: FileRef,
    pub series: Vec<SeriesRecord>,
    #[serde(default)]
    pub failures: Vec<Failure>,
    #[serde(default)]
    pub tables: Vec<FileRef>,
    pub created_at: u64,
    pub updated_at: u64,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corruption {
            path,
            reason: format!("unreadable manifest: {e}"),
        })
    }

    pub fn save(&mut self, run_dir: &Path) -> Result<()> {
        self.updated_at = now();
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&run_dir.join(MANIFEST), text.as_bytes())
    }

    /// Every referenced file exists and matches its hash.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        self.tokenizer.verify(run_dir)?;
        for s in &self.series {
            for g in &s.generations {
                for f in g.checkpoint.iter().chain(&g.corpus) {
                    f.verify(run_dir)?;
                }
                for c in &g.cells {
                    c.report.verify(run_dir)?;
                    c.answers.verify(run_dir)?;
                }
            }
        }
        for t in &self.tables {
            t.verify(run_dir)?;
        }
        Ok(())
    }

    pub fn series(&self, label: &str) -> Option<&SeriesRecord> {
        self.series.iter().find(|s| s.label == label)
    }
}

/// Exclusive ownership of a run directory for the life of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(".lock");
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let alive = holder
                        .trim()
                        .parse::<u32>()
                        .is_ok_and(|pid| pid == std::process::id() || Path::new(&format!("/proc/{pid}")).exists());
                    if alive || !Path::new("/proc/self").exists() {
                        return Err(Error::Locked(run_dir.to_path_buf()));
                    }
                    tracing::warn!("removing stale lock left by process {}", holder.trim());
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Locked(run_dir.to_path_buf()))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
