use std::path::PathBuf;

use fogmesh_core::daphnet_io::DatasetError;
use fogmesh_core::eval::EvalError;
use fogmesh_core::nodesim::SimError;
use fogmesh_core::quant::QuantError;
use fogmesh_core::secnn::ModelError;
use fogmesh_core::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing or malformed inputs.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Artifact {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("output directory {0} is locked by another run (remove .fogmesh.lock if stale)")]
    Locked(PathBuf),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    /// A `--strict` conformance check did not hold.
    #[error("strict check failed: {0}")]
    Strict(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for problems the user can fix by changing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Json { .. }
            | CliError::Artifact { .. }
            | CliError::Locked(_)
            | CliError::Dataset(_) => 2,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            CliError::Sim(SimError::DuplicateSite(_) | SimError::NoNodes | SimError::SampleRate(_) | SimError::Transport(_)) => 2,
            CliError::Train(TrainError::InvalidConfig(_) | TrainError::SingleClass { .. }) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
