use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading data, fitting, or post-processing a model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {table}: {message}")]
    Parse { table: String, message: String },

    #[error("dimension mismatch in {table}: {message}")]
    Dimension { table: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown covariate `{name}`; available: {}", available.join(", "))]
    UnknownCovariate { name: String, available: Vec<String> },

    #[error("covariate `{covariate}` has unseen level `{level}`")]
    UnseenLevel { covariate: String, level: String },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn parse(table: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            table: table.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dimension(table: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Dimension {
            table: table.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by numerics rather than by user input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
