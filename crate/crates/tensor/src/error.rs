use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid parameter for {op}: {msg}")]
    Parameter { op: &'static str, msg: String },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn param(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Parameter {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
