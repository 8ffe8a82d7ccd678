use std::path::PathBuf;

/// Invalid or unparsable configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: line {line}, column {column}: field `{field}`: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, field: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read model {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("model needs at least 4 non-coplanar points")]
    Degenerate,
    #[error("requested {requested} keypoints but the model has {available} points")]
    TooFewPoints { requested: usize, available: usize },
}

/// Failures of an EKF measurement update. In both cases the caller keeps
/// the predicted state.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum UpdateError {
    #[error("innovation covariance is numerically singular (condition {condition:.3e})")]
    SingularInnovation { condition: f64 },
    #[error("every keypoint was rejected by the innovation gate")]
    AllRejected,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("numerical failure at frame {frame}: {message}")]
    NumericalFailure { frame: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
