//! File formats, ensemble fan-out and command implementations behind the
//! `speccascade` binary.

pub mod analytic;
pub mod config;
pub mod run;

use std::path::PathBuf;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SPECCASCADE_OUT_DIR";

/// Exit status for bad arguments or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for a broken internal invariant (a losslessness breach).
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

impl From<speccascade_core::Error> for CliError {
    fn from(e: speccascade_core::Error) -> Self {
        if e.is_invariant_breach() {
            CliError::Invariant(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Output directory: explicit flag, else the environment override, else the
/// config value, else the working directory.
pub fn output_dir(flag: Option<PathBuf>, configured: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or(configured)
        .unwrap_or_else(|| PathBuf::from("."))
}
