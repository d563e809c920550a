//! Output-directory handling, atomic artifact writes, and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use crate::config::ConfigMap;
use crate::CliError;

/// Artifacts are written to a temp file and renamed into place, so a crashed
/// run never leaves a truncated file that parses.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Collects everything the manifest records; exactly one manifest JSON is
/// written per run, after the command finishes (successfully or not).
pub struct RunManifest {
    subcommand: String,
    config: ConfigMap,
    out_dir: PathBuf,
    started: f64,
    artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &ConfigMap, out_dir: &Path) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: config.clone(),
            out_dir: out_dir.to_path_buf(),
            started: unix_now(),
            artifacts: Vec::new(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Write one artifact atomically and record it.
    pub fn write_artifact(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        write_atomic(&self.out_dir.join(name), content)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn record_artifact(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    /// Finalize and write `manifest.json`.
    pub fn finish(&self, exit_status: i32) -> Result<(), CliError> {
        let manifest = json!({
            "subcommand": self.subcommand,
            "config": self.config,
            "out_dir": self.out_dir.display().to_string(),
            "started_unix": self.started,
            "finished_unix": unix_now(),
            "artifacts": self.artifacts,
            "exit_status": exit_status,
        });
        write_atomic(
            &self.out_dir.join("manifest.json"),
            &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
    }
}

/// Resolve the run's output directory: `--out` flag, else `$INFOMAXDA_OUT`,
/// else `./runs`, with the subcommand name appended when the flag is absent.
pub fn resolve_out_dir(flag: Option<&str>, subcommand: &str) -> PathBuf {
    match flag {
        Some(dir) => PathBuf::from(dir),
        None => {
            let root = std::env::var("INFOMAXDA_OUT").unwrap_or_else(|_| "runs".to_string());
            Path::new(&root).join(subcommand)
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))
}
