//! Team-pool PPO with influence and diversity shaping.
//!
//! Each team has one actor per agent index and a centralized critic whose
//! input is the joint observation plus the collaboration features. Teams are
//! trained round-robin in chunks; from the second cycle on the diversity term
//! pushes each team away from the population-mean policy.

mod config;
mod gae;
mod nets;
mod pool;
mod ppo;
mod rollout;

use std::path::{Path, PathBuf};

pub use config::{PoolSchedule, PpoConfig};
pub use gae::compute_gae;
pub use nets::{CriticNet, PolicyNet, HIDDEN};
pub(crate) use nets::argmax;
pub use pool::{
    add_handoff_bonus, buffer_gae, buffer_labels, chunk_dir, config_hash, normalize_scores, save_chunk, score_team_pool, shape_rewards,
    ChunkReport, IterationMetrics, PoolConfig, PoolTrainer, QualityScores, Team, TeamPool, POOL_MANIFEST,
};
pub use ppo::{approx_kl, normalize_advantages, ppo_update, value_update, PolicyBatch, UpdateStats};
pub use rollout::{
    collect_rollout, critic_input, critic_input_width, joint_observation, joint_observation_width, mix_seed,
    play_episode, sample_index, sample_team_actions, EpisodeRecord, RolloutBuffer, VecEnv,
};

use crate::env::{ResetError, StepError};
use crate::nn::CheckpointError;
use crate::shaping::ShapingError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("GAE needs {steps} + 1 values, got {values}")]
    MissingBootstrap { steps: usize, values: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("unknown layout {0:?}")]
    UnknownLayout(String),
    #[error("pool has no quality scores; run score-pool first")]
    Unscored,
    #[error("every scheduled chunk is already trained")]
    ScheduleDone,
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Reset(#[from] ResetError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
