use std::io;

use thiserror::Error;

/// Errors produced by every stage of the candidate-selection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition or type invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Input is structurally valid but cannot be processed (e.g. all-zero scores).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A text file did not match its expected format.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("calibration failed: best top-1 rate {best_rate:.4} (target {target:.4} ± {tolerance:.4})")]
    Calibration {
        best_rate: f64,
        target: f64,
        tolerance: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
