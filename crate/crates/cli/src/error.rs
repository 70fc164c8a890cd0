use std::path::{Path, PathBuf};

use issp_core::checkpoint::CheckpointError;
use issp_core::config::ConfigError;
use issp_core::data::DataError;
use issp_core::eval::EvalError;
use issp_core::nn::NnError;
use issp_core::pruning::{PruneError, TrainError};
use issp_core::sparse::SparseError;
use issp_core::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(CheckpointError),
    #[error("checkpoint masks are not frozen; finish training before exporting")]
    NotFrozen,
    #[error("gradient check failed: worst layer {layer} (max rel err {err:.3e}, tolerance {tol:.0e})")]
    Gradcheck { layer: String, err: f64, tol: f64 },
    #[error(transparent)]
    Sparse(SparseError),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Eval(EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::NotFrozen => 5,
            _ => 1,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        move |source| CliError::Write { path, source }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(format!("invalid config: {m}")),
            TrainError::Data(d) => CliError::Data(d),
            other => CliError::Train(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TooSmall { .. } => CliError::Data(DataError::Empty(e.to_string())),
            other => CliError::Eval(other),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SparseError> for CliError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::NotFrozen => CliError::NotFrozen,
            SparseError::File(c) => CliError::Checkpoint(c),
            SparseError::TooFewReps(n) => CliError::Usage(format!("--reps must be at least 3, got {n}")),
            other => CliError::Sparse(other),
        }
    }
}
