use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
