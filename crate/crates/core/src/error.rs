use std::path::PathBuf;

use ser_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
    #[error("{0}")]
    Corpus(String),
    #[error("embedding file line {line}: {msg}")]
    Embedding { line: usize, msg: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint integrity: {0}")]
    Checkpoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at iteration {iter}, step {step}: {detail}")]
    NonFiniteLoss {
        iter: usize,
        step: usize,
        detail: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
