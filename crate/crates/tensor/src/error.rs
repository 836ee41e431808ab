use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("element count {len} does not match shape {shape:?}")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("{op}: extent {extent} with kernel {kernel}, padding {padding}, stride {stride} gives a non-integer output extent")]
    NonIntegerExtent {
        op: &'static str,
        extent: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward was already run on this tape")]
    BackwardTwice,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
