//! Scoring, scripted partners, baselines and result tables.

mod baseline;
mod controller;
mod harness;
mod heuristic;
mod sweep;
mod table;

use std::path::{Path, PathBuf};

pub use baseline::{reward_hacking_baseline, team_self_play, BaselineReport, RewardHackingConfig};
pub use controller::{run_episode, Controller, MachineAgents};
pub use harness::{run_eval, EpisodeScore, EvalRun, EvalSpec, REPLAY_DIR};
pub use heuristic::{PassingPlan, PassingRole};
pub use sweep::{k_sensitivity_sweep, KSweepConfig, KSweepReport};
pub use table::{ScoreCell, ScoreRow, ScoreTable, SCORES_FILE};

use crate::env::{ReplayError, StepError};
use crate::nn::CheckpointError;
use crate::predictor::PredictorError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("roster has {found} partners, layout needs {expected}")]
    RosterMismatch { expected: usize, found: usize },
    #[error("slot {slot}: {reason}")]
    Shape { slot: usize, reason: String },
    #[error("passing roles undefined for {0}")]
    RoleUndefined(String),
    #[error("unknown layout {0}")]
    UnknownLayout(String),
    #[error("empty K set")]
    EmptySweep,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
