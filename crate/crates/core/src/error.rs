use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts, or hyperparameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computed value went non-finite.
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("format error in {what}: {msg}")]
    Format { what: String, msg: String },

    /// Training hit a non-finite loss. The last good parameters were saved.
    #[error("non-finite loss at epoch {epoch}, batch {batch}; last good checkpoint: {}", checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<none>".into()))]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Err(Error::Config(format!(...)))`.
macro_rules! config_err {
    ($($arg:tt)*) => {
        Err($crate::error::Error::Config(format!($($arg)*)))
    };
}
pub(crate) use config_err;

impl Error {
    pub(crate) fn format(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            msg: msg.into(),
        }
    }
}
