//! Experiment harness for `pipf-core`: configuration, the benchmark
//! scenarios, CSV output and the invariant suites behind `pipf validate`.

use std::path::PathBuf;

use pipf_core::PipfError;
use thiserror::Error;

pub mod config;
pub mod output;
pub mod scenarios;
pub mod validate;

pub use config::{Controller, ExperimentConfig, Scenario};
pub use scenarios::{run_benes, run_configured, run_h_sweep, run_linear_nd, run_ou, RunOutput};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] PipfError),

    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 2 for bad configuration, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) if e.is_numerical() => 3,
            HarnessError::Core(_) => 2,
            HarnessError::Io { .. } | HarnessError::Csv(_) => 1,
        }
    }
}
