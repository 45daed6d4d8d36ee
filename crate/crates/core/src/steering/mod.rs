//! Predictor-guided teachers and shared-student distillation.
//!
//! A teacher for agent index `i` acts on `(o_t^i, c_t)` next to a frozen pool
//! team and is rewarded for moving the predicted team distribution toward
//! higher-quality teams. Teachers are then distilled into one student that
//! never sees the agent index.

mod distill;
mod reward;
mod teacher;

use std::path::{Path, PathBuf};

pub use distill::{
    action_histogram, agreement, bc_loss, distill_student, export_distill_dataset, DistillConfig, DistillDataset,
    DistillEpisode, DistillRecord, DistillReport, DISTILL_FILE, DISTILL_MANIFEST,
};
pub use reward::{steering_reward, steering_rewards, total_reward, trajectory_quality, SteeringConfig};
pub use teacher::{
    actor_input, save_teacher, steered_episode, train_teacher, PartnerSampler, SteeredEpisode, SteeringContext,
    TeacherConfig, TeacherMetrics, TeacherTrainer,
};

use crate::nn::CheckpointError;
use crate::predictor::PredictorError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum SteeringError {
    #[error("distribution has {probs} entries but there are {scores} quality scores")]
    LengthMismatch { probs: usize, scores: usize },
    #[error("pool has no quality scores; run score-pool first")]
    Unscored,
    #[error("no teacher for agent index {0}")]
    MissingTeacher(usize),
    #[error("empty distillation dataset or held-out split")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss or gradient")]
    NonFinite,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl SteeringError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SteeringError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl ToString) -> Self {
        SteeringError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}
