use std::path::{Path, PathBuf};

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("malformed config: {0}")]
    Config(String),
    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Train(#[from] teamcook::trainer::TrainError),
    #[error(transparent)]
    Predictor(#[from] teamcook::predictor::PredictorError),
    #[error(transparent)]
    Steering(#[from] teamcook::steering::SteeringError),
    #[error(transparent)]
    Eval(#[from] teamcook::eval::EvalError),
    #[error(transparent)]
    Checkpoint(#[from] teamcook::nn::CheckpointError),
    #[error(transparent)]
    Replay(#[from] teamcook::env::ReplayError),
    #[error(transparent)]
    Session(teamcook_server::SessionError),
}

impl From<teamcook_server::SessionError> for CliError {
    fn from(e: teamcook_server::SessionError) -> Self {
        match e {
            teamcook_server::SessionError::MissingCheckpoint(p) => CliError::MissingCheckpoint(p),
            e => CliError::Session(e),
        }
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "malformed_config",
            CliError::MissingCheckpoint(_) => "missing_checkpoint",
            CliError::Io { .. } => "io",
            CliError::Train(_) => "train",
            CliError::Predictor(_) => "predictor",
            CliError::Steering(_) => "steering",
            CliError::Eval(_) => "eval",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Replay(_) => "replay",
            CliError::Session(_) => "session",
        }
    }

    /// One line for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

/// `path` if it is an existing file.
pub fn require(path: &Path) -> Result<&Path, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingCheckpoint(path.to_path_buf()))
    }
}
