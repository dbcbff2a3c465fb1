use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("epsilon {epsilon} is outside the valid window ({lower}, 1] for d = {dim}, beta = {beta}")]
    EpsilonOutOfWindow {
        epsilon: f64,
        lower: f64,
        dim: usize,
        beta: f64,
    },

    #[error(
        "conditional sampling is undefined for layer 1; use the closed form h(T1|X) = (d1/2) log(2*pi*e*beta^2)"
    )]
    ConditionalFirstLayer,

    #[error(
        "layer {layer} has beta = 0: I(X;T) is vacuous in a deterministic network (it equals H(X) for injective maps), refusing to estimate"
    )]
    DeterministicLayer { layer: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("value {value} at row {row}, coordinate {coord} is outside the binning range [{lo}, {hi}]")]
    OutOfRange {
        row: usize,
        coord: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("slope regression needs at least 2 epochs, got {0}")]
    TooFewEpochs(usize),

    #[error("operation requires class labels")]
    MissingLabels,

    #[error("parse error in {path:?} at byte offset {offset}: {message}")]
    Parse {
        path: Option<PathBuf>,
        offset: u64,
        message: String,
    },

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("missing checkpoint for epoch {epoch} in {dir:?}")]
    MissingCheckpoint { epoch: usize, dir: PathBuf },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: None,
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn with_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Parse {
                offset, message, ..
            } => Error::Parse {
                path: Some(path.into()),
                offset,
                message,
            },
            other => other,
        }
    }

    /// Process exit code: 2 configuration, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::InvalidMixture(_)
            | Error::EpsilonOutOfWindow { .. }
            | Error::ConditionalFirstLayer
            | Error::DeterministicLayer { .. }
            | Error::DimensionMismatch { .. }
            | Error::MissingLabels
            | Error::TooFewEpochs(_)
            | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::OutOfRange { .. } => 3,
            Error::Parse { .. } | Error::Io { .. } | Error::MissingCheckpoint { .. } => 4,
        }
    }
}
