use std::path::PathBuf;

use fracnet_core::fdsolver::FdError;
use fracnet_core::fracops::FracError;
use fracnet_core::operatormodel::OperatorError;
use serde::Serialize;
use thiserror::Error;

use crate::experiment::LossRow;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("unknown experiment id `{0}`")]
    UnknownExperiment(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse config {path}: {source}")]
    ConfigParse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<LossRow> },
    #[error(transparent)]
    Model(OperatorError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Order(#[from] FracError),
}

impl From<OperatorError> for LabError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Diverged { epoch, history } => LabError::Diverged {
                epoch,
                history: history.iter().enumerate().map(|(i, l)| LossRow::new(i, l)).collect(),
            },
            other => LabError::Model(other),
        }
    }
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::UnknownExperiment(_) => "unknown_experiment",
            LabError::InvalidConfig(_) | LabError::ConfigParse { .. } => "invalid_config",
            LabError::Io { .. } | LabError::Csv { .. } | LabError::Json { .. } | LabError::Malformed { .. } => "io",
            LabError::Diverged { .. } => "diverged",
            LabError::Model(_) => "model",
            LabError::Fd(_) => "fd_solver",
            LabError::Order(_) => "order",
        }
    }

    /// Machine-readable form printed by the CLI on failure.
    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: self.kind(),
            message: self.to_string(),
            epochs_completed: match self {
                LabError::Diverged { history, .. } => Some(history.len()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_completed: Option<usize>,
}
