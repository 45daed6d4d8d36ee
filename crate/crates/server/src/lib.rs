//! Live-play sessions for mixed human and machine teams over a JSON
//! websocket protocol. The world steps only once every slot has acted.

mod app;
mod bindings;
mod session;
pub mod wire;

use std::path::{Path, PathBuf};

pub use app::{router, serve, AppState, CreateSession, ServeConfig};
pub use bindings::CheckpointStore;
pub use session::{ClientId, Outbound, Recipient, Rejection, Session, SessionConfig, SessionStatus, SlotBinding};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown layout {0}")]
    UnknownLayout(String),
    #[error("{found} slot bindings for a {expected}-agent game")]
    BindingCount { expected: usize, found: usize },
    #[error("unknown slot binding {0:?}; expected human, random, stay, scripted:passing, policy:<ckpt> or conditioned:<ckpt>@<predictor>")]
    UnknownBinding(String),
    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint path {0:?} must stay inside the checkpoint directory")]
    EscapingPath(String),
    #[error("invalid session: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Checkpoint(#[from] teamcook::nn::CheckpointError),
    #[error(transparent)]
    Predictor(#[from] teamcook::predictor::PredictorError),
    #[error(transparent)]
    Eval(#[from] teamcook::eval::EvalError),
}

impl SessionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SessionError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
