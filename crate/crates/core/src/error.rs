use std::path::PathBuf;

use thiserror::Error;

use crate::network::RnnOdeSpec;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    Domain(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("training diverged in epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        last_good: Box<RnnOdeSpec>,
    },

    #[error("readout matrix is not invertible (reciprocal condition {rcond:e})")]
    NotInvertible { rcond: f64 },

    #[error("state left the simplex interior: component {index} = {value:e}")]
    InteriorViolation { index: usize, value: f64 },

    #[error("not a simplex point: {0}")]
    Simplex(String),

    #[error("label {label} out of range 1..={classes}")]
    Label { label: usize, classes: usize },

    #[error("{path}: format error at {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
