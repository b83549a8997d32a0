//! Monte Carlo scenario runner: Alice/Eve link simulation, the detection
//! protocol, sweeps, ROC curves and CSV output.
//!
//! Trial `i` of a run with master seed `s` uses a `ChaCha8Rng` seeded with
//! `splitmix64(s + (i + 1) * 0x9E3779B97F4A7C15)` (wrapping arithmetic), so a
//! trial's outcome depends only on `(config, s, i)` and trials may run in any
//! order or in parallel.

mod config;
pub mod csv;
pub mod selftest;
mod sim;

pub use config::{ConfigError, EveChannel, Protocol, ScenarioConfig};
pub use sim::{
    roc, roc_curve, run_trial, sweep, trial_seed, DetectionCounts, RocCurve, RocPoint, RocResult, Scenario, SweepAxis, SweepPoint,
    SweepResult, TrialResult,
};

use crate::channel::ChannelError;
use crate::detector::DetectorError;
use crate::estimator::EstimatorError;
use crate::observation::ObservationError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("trial {trial} (seed {seed:#018x}) failed at step {step}: {source}")]
    Trial { trial: usize, seed: u64, step: u64, source: Box<HarnessError> },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Csv { path: String, line: usize, message: String },
    #[error("invalid request: {0}")]
    Request(String),
}

impl HarnessError {
    /// Process exit code for this error: 2 usage, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Request(_) => 2,
            HarnessError::Io { .. } | HarnessError::Csv { .. } => 4,
            HarnessError::Trial { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
