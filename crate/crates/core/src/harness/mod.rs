//! Experiment protocol: seeded trials, per-episode value error, aggregation
//! across trials, grid search, and file exports.

mod config;
pub mod export;
mod grid;
mod metrics;
mod theorem;
mod trial;

use thiserror::Error;

pub use config::{Algorithm, TrialConfig};
pub use grid::{grid_search, GridCell, GridReport, GridSpec, HyperParam};
pub use metrics::{
    aggregate, post_switch_scores, window_score, Aggregate, AlgorithmSummary, CurvePoint, PairTest,
    Summary, CONFIDENCE, SCORE_WINDOW,
};
pub use theorem::{theorem_demo, TheoremDemo};
pub use trial::{
    mse_episode, run_trial, run_trial_full, run_trials, stream, EpisodeRecord, TrialOutput,
    ENV_STREAM, MODEL_STREAM, SAMPLING_STREAM,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid `{name}` = {value}: {reason}")]
    InvalidConfig {
        name: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error("unknown algorithm `{0}` (expected modelfree, allexp, stableexp or synthdyna)")]
    UnknownAlgorithm(String),
    #[error("trial diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("no episode records")]
    NoRecords,
    #[error("trial {trial} has {found} episodes, expected {expected}")]
    UnequalTrials {
        trial: usize,
        expected: usize,
        found: usize,
    },
    #[error("grid axis `{0}` has no values")]
    EmptyGrid(&'static str),
    #[error("worker pool: {0}")]
    Workers(String),
    #[error(transparent)]
    Env(#[from] crate::hallway::EnvError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
