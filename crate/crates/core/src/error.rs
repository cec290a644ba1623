use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, count).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("shape mismatch in layer `{layer}`: expected {expected} values, found {found}")]
    LayerShape {
        layer: String,
        expected: usize,
        found: usize,
    },

    #[error("numeric failure in base learner {learner}: {message}")]
    Numeric { learner: usize, message: String },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: u64, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }
}

/// Returns a [`Error::Contract`] from the enclosing function.
macro_rules! contract {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Contract(format!($($arg)*)))
    };
}

/// Checks a precondition, returning a [`Error::Contract`] when it fails.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            $crate::error::contract!($($arg)*);
        }
    };
}

pub(crate) use contract;
pub(crate) use ensure;
