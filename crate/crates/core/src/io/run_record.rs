//! Run-record emission. Each run gets a fresh timestamped directory holding
//! the deterministic record (config echo, per-iteration scalars, metrics,
//! NFE accounting) plus a separate metadata file for timestamps and wall
//! time, so rerunning with the same seed yields byte-identical artifacts.

use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use crate::admm::SolverState;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

use super::config::RunConfigFile;

/// Create `base/<label>-<unix-nanos>[-k]/`, never reusing an existing
/// directory.
pub fn create_run_dir(base: &Path, label: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(base)?;
    let nanos = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map_err(|e| Error::Config(format!("system clock: {e}")))?
        .as_nanos();
    for k in 0..1000 {
        let name = if k == 0 {
            format!("{label}-{nanos}")
        } else {
            format!("{label}-{nanos}-{k}")
        };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::Config("could not allocate a fresh run directory".into()))
}

#[derive(Serialize)]
struct Accounting {
    n_steps: usize,
    denoiser_calls: usize,
    linear_solves: usize,
    shadow_denoiser_calls: usize,
    signal_scalars: usize,
}

#[derive(Serialize)]
struct RecordDoc<'a> {
    config: &'a RunConfigFile,
    accounting: Accounting,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<&'a MetricReport>,
    iterations: &'a [crate::admm::IterRecord],
}

/// Write the deterministic run record.
pub fn write_run_record(
    dir: &Path,
    config: &RunConfigFile,
    state: &SolverState,
    metrics: Option<&MetricReport>,
) -> Result<PathBuf> {
    let doc = RecordDoc {
        config,
        accounting: Accounting {
            n_steps: state.records.len(),
            denoiser_calls: state.denoiser_calls,
            linear_solves: state.linear_solves,
            shadow_denoiser_calls: state.shadow_denoiser_calls,
            signal_scalars: state.signal_scalars,
        },
        metrics,
        iterations: &state.records,
    };
    let text = toml::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("run_record.toml");
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Write timestamps and wall time, kept out of the deterministic record.
pub fn write_meta(dir: &Path, wall_time_secs: f64) -> Result<()> {
    let started = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let text = format!("wall_time_secs = {wall_time_secs}\nwritten_unix_secs = {started}\n");
    std::fs::write(dir.join("meta.toml"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let base = tempfile::tempdir().unwrap();
        let a = create_run_dir(base.path(), "t").unwrap();
        let b = create_run_dir(base.path(), "t").unwrap();
        assert_ne!(a, b);
        assert!(a.exists() && b.exists());
    }
}
