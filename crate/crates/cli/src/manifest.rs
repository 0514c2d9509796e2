//! Run manifests and the per-directory run lock.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{file_sha256, write_atomic};
use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".rcdm.lock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    pub fingerprints: BTreeMap<String, String>,
    pub started_unix: u64,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path)
            .map_err(|e| rcdm_core::Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_slice(&bytes)?;
        if m.schema_version != MANIFEST_VERSION {
            return Err(rcdm_core::Error::VersionMismatch {
                found: m.schema_version,
                expected: MANIFEST_VERSION,
            }
            .into());
        }
        Ok(m)
    }

    /// Artifact checksums keyed by name.
    pub fn checksums(&self) -> BTreeMap<&str, &str> {
        self.artifacts.iter().map(|(k, v)| (k.as_str(), v.sha256.as_str())).collect()
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Output directory of one command invocation.
pub struct Run {
    pub out: PathBuf,
    pub seed: u64,
    artifacts: BTreeMap<String, ArtifactRecord>,
    fingerprints: BTreeMap<String, String>,
    started: Instant,
    started_unix: u64,
    _lock: OutputLock,
}

impl Run {
    pub fn start(out: &Path, seed: u64) -> CliResult<Self> {
        let lock = OutputLock::acquire(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            seed,
            artifacts: BTreeMap::new(),
            fingerprints: BTreeMap::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            _lock: lock,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    /// Records a file already written under the output directory.
    pub fn record(&mut self, name: &str, file: &str) -> CliResult<PathBuf> {
        let path = self.path(file);
        let sha256 = file_sha256(&path)?;
        self.artifacts.insert(
            name.to_string(),
            ArtifactRecord {
                path: file.to_string(),
                sha256,
            },
        );
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, file: &str, value: &T) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        write_atomic(&self.path(file), &bytes)?;
        self.record(name, file)
    }

    pub fn write_text(&mut self, name: &str, file: &str, text: &str) -> CliResult<PathBuf> {
        write_atomic(&self.path(file), text.as_bytes())?;
        self.record(name, file)
    }

    pub fn fingerprint(&mut self, name: &str, value: impl ToString) {
        self.fingerprints.insert(name.to_string(), value.to_string());
    }

    pub fn finish(self, command: &str, config: &Config) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            schema_version: MANIFEST_VERSION,
            command: command.to_string(),
            seed: self.seed,
            config: config.values().clone(),
            artifacts: self.artifacts,
            fingerprints: self.fingerprints,
            started_unix: self.started_unix,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.out.join(MANIFEST_FILE), &bytes)?;
        Ok(manifest)
    }
}
