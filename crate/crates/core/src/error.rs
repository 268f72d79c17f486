use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor spec: {0}")]
    FactorSpec(String),

    #[error("invalid factor grid: {0}")]
    FactorGrid(String),

    #[error("invalid latent response: {0}")]
    LatentResponse(String),

    #[error("invalid model set: {0}")]
    ModelSet(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("invalid encoder config: {0}")]
    EncoderConfig(String),

    #[error("invalid pairing request: {0}")]
    Pairing(String),

    #[error("misaligned sample orderings: {0}")]
    Misaligned(String),

    #[error("metric `{metric}` failed: {reason}")]
    Metric { metric: String, reason: String },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("invalid report input: {0}")]
    Report(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn metric(metric: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Metric {
            metric: metric.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
