use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("optimizer: no gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("optimizer: gradient for `{name}` has shape {got:?}, parameter has {want:?}")]
    GradientShape { name: String, got: Vec<usize>, want: Vec<usize> },
}

impl TensorError {
    pub(crate) fn shapes(op: &'static str, shapes: &[&[usize]]) -> Self {
        TensorError::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }
}
