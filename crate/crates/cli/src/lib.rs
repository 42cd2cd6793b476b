//! Experiment harness around `glauber_ggm`: model generation, simulation,
//! learning, parameter sweeps and the Monte-Carlo verifier suite.
//!
//! Every payload embeds the SHA-256 of the resolved configuration and the
//! seed. Wall-clock timings go to `*.timing.*` sidecars so payloads stay
//! byte-identical across reruns and worker counts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::Serialize;

pub mod calibrate;
pub mod config;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;

/// A configuration problem; maps to exit status 3.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass = 0,
    Failure = 1,
    Inconclusive = 2,
    Config = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

/// Exit status for an error escaping a command.
pub fn classify(err: &anyhow::Error) -> Status {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return Status::Config;
        }
        if let Some(e) = cause.downcast_ref::<glauber_ggm::Error>() {
            if matches!(e, glauber_ggm::Error::Config(_) | glauber_ggm::Error::OutOfRange { .. }) {
                return Status::Config;
            }
        }
    }
    Status::Failure
}

/// Run `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(ConfigError("workers must be at least 1".into()).into()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

/// `<path>.timing.<ext>` next to an output file.
pub fn sidecar_path(out: &Path, ext: &str) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".timing.{ext}"));
    out.with_file_name(name)
}

#[derive(Serialize)]
struct Timing<'a> {
    command: &'a str,
    runtime_secs: f64,
}

pub fn write_timing(out: &Path, command: &str, runtime: std::time::Duration) -> anyhow::Result<()> {
    let t = Timing {
        command,
        runtime_secs: runtime.as_secs_f64(),
    };
    std::fs::write(sidecar_path(out, "json"), serde_json::to_string(&t)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classification() {
        let cfg: anyhow::Error = ConfigError("x".into()).into();
        assert_eq!(classify(&cfg), Status::Config);
        let core: anyhow::Error = glauber_ggm::Error::Config("k_max".into()).into();
        assert_eq!(classify(&core.context("learning")), Status::Config);
        let io: anyhow::Error = std::io::Error::other("disk").into();
        assert_eq!(classify(&io), Status::Failure);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar_path(Path::new("out/sweep.csv"), "csv"),
            PathBuf::from("out/sweep.csv.timing.csv")
        );
    }
}
