//! Run manifests, config loading and exit codes.

use std::fmt;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "manifest.json";

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: m.into() }
    }

    pub fn io(m: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: m.into() }
    }

    pub fn diverged(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DIVERGED,
            message: m.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<wavecorr::Error> for CliError {
    fn from(e: wavecorr::Error) -> Self {
        use wavecorr::Error as E;
        let code = match &e {
            E::Io(_) | E::Format(_) | E::Ingestion(_) | E::Json(_) => EXIT_IO,
            E::Diverged(_) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub threads: usize,
    pub seed: u64,
    /// Effective configuration; `--config` accepts this file to re-run.
    pub config: serde_json::Value,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<String>,
    /// CSV file name to schema version.
    pub schemas: BTreeMap<String, u32>,
    pub wall_seconds: f64,
    pub result: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::io(e.to_string()))?;
        fs::write(dir.join(RUN_MANIFEST), text)?;
        Ok(())
    }
}

/// Reads a config file as JSON, unwrapping the `config` of a run manifest
/// written by the same command.
pub fn load_value(path: &Path, command: &str) -> CliResult<serde_json::Value> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    match (v.get("command"), v.get("config")) {
        (Some(c), Some(cfg)) if v.get("code_version").is_some() => {
            if c != command {
                return Err(CliError::config(format!("{} is a manifest of `{c}`, not `{command}`", path.display())));
            }
            Ok(cfg.clone())
        }
        _ => Ok(v),
    }
}

pub fn to_value<T: Serialize>(t: &T) -> serde_json::Value {
    serde_json::to_value(t).expect("serialisable value")
}

pub fn file_ref(path: &Path) -> CliResult<InputRef> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(InputRef {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn ensure_dir(p: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
    Ok(p.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}
