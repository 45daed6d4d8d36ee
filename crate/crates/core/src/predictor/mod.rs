//! Partner-trajectory classifier: a small transformer maps the last few joint
//! steps to a coordination embedding and a distribution over pool teams.

mod dataset;
mod model;
mod train;
mod window;

use std::path::{Path, PathBuf};

pub use dataset::{
    generate_dataset, generate_predictor_dataset, EpisodeMeta, PredictorDataset, Sample, Split, TeamBehavior,
    DATASET_FILE, DATASET_MANIFEST, DEFAULT_STRIDE,
};
pub use model::{EncoderConfig, Inference, TrajectoryPredictor};
pub use train::{cross_entropy, evaluate, train_predictor, EpochRecord, PredictorTrainConfig, TrainedPredictor};
pub use window::{build_window, step_width, HistoryTracker, StepRecord, TrajectoryWindow, AGENT_FEATURES, WINDOW_LEN};

use crate::nn::CheckpointError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("empty history")]
    EmptyHistory,
    #[error("window width {found} does not match the model's {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty team pool")]
    EmptyPool,
    #[error("empty dataset split")]
    EmptyDataset,
    #[error("team {0} has no training windows")]
    MissingLabel(usize),
    #[error("non-finite loss or gradient")]
    NonFinite,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl PredictorError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PredictorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl ToString) -> Self {
        PredictorError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}
