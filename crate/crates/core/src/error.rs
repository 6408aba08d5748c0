use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("mask has no foreground pixels; distance is undefined")]
    EmptyMask,
    #[error("mask is uniform ({0}); signed distance needs both classes")]
    DegenerateMask(&'static str),
    #[error("numeric overflow: {0}")]
    NumericOverflow(String),
    #[error("velocity provider failed at step {step}: {source}")]
    Provider {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid prompt: {0}")]
    Prompt(String),
    #[error("scene generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged on sample seed {seed}: {reason}")]
    Diverged { seed: u64, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
