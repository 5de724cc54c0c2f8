use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage an error originated in, echoed in CLI diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Model,
    Search,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("transform of feature `{feature}`: {reason}")]
    Transform { feature: String, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("singular design matrix; dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("missing feature `{0}`")]
    MissingFeature(String),

    #[error("no bellwether: {0}")]
    NoBellwether(String),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            Error::Config(_) | Error::Parameter(_) => Stage::Config,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Schema(_)
            | Error::EmptyInput(_)
            | Error::Transform { .. }
            | Error::InsufficientData(_)
            | Error::LengthMismatch { .. }
            | Error::MissingFeature(_) => Stage::Data,
            Error::RankDeficient { .. } | Error::Undefined(_) | Error::Divergence(_) => {
                Stage::Model
            }
            Error::NoBellwether(_) => Stage::Search,
            Error::Serde(_) => Stage::Internal,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
