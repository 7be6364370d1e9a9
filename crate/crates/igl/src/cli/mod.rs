//! Experiment runner: config parsing, per-trial pipelines, sweeps, and CSV
//! metrics emission.

mod checks;
mod config;
mod runner;

pub use checks::{oracle_checks, CheckResult};
pub use config::{ConfigMap, EnvChoice, ExperimentConfig};
pub use runner::{build_env, run, sweep, write_train_log, RunSummary, SweepAxis, TrialRecord};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Env(#[from] crate::env::EnvError),

    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),

    #[error(transparent)]
    Bandit(#[from] crate::bandit::BanditError),

    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
}
