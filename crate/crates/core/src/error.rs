use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A caller broke an API contract (non-scalar loss passed to backward, k out of range, ...).
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("training diverged at level {level}, epoch {epoch}, batch {batch}: {what} is not finite")]
    Divergence {
        level: usize,
        epoch: usize,
        batch: usize,
        what: &'static str,
    },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Adds the level index to a divergence raised by a single-level trainer.
    pub(crate) fn at_level(self, level: usize) -> Self {
        match self {
            Error::Divergence {
                epoch, batch, what, ..
            } => Error::Divergence {
                level,
                epoch,
                batch,
                what,
            },
            other => other,
        }
    }
}
