use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular or ill-conditioned system: {0}")]
    Singular(&'static str),

    #[error("empty click window")]
    EmptyWindow,

    #[error("trajectory has {len} steps, fewer than the window {window}")]
    ShortTrajectory { len: usize, window: usize },

    #[error("non-finite training loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("reference sensitivity has zero norm")]
    ZeroNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimator artifact: {0}")]
    Artifact(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}
