//! Intrinsic rewards for team-pool construction: collaborative features,
//! salient actions, follow-up labels, directed influence classifiers and the
//! population diversity bonus.

mod diversity;
mod features;
mod handoff;
mod labels;
mod predictors;
mod reward;

pub use diversity::{diversity_reward, population_mean_policy};
pub use features::{collab_features, collab_width, salient_action, salient_action_by, SalientActionRecord};
pub use handoff::{detect_handoffs, Handoff, HandoffBonus, HandoffTracker};
pub use labels::event_labels;
pub use predictors::{
    influence_reward, BinaryClassifier, InfluenceBatch, InfluenceLosses, InfluencePredictors, PredictorTraining,
};
pub use reward::{combined_reward, RewardBreakdown, ShapingWeights};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapingError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("batch has no samples")]
    EmptyBatch,
    #[error("population is empty")]
    EmptyPool,
    #[error("influence needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("invalid shaping weights: {0}")]
    InvalidWeights(String),
    #[error("{what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite classifier loss")]
    NonFinite,
}
