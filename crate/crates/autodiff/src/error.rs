use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}{}: {detail}", node_suffix(*.node))]
    ShapeMismatch {
        op: &'static str,
        node: Option<usize>,
        detail: String,
    },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("zero-norm row {row} cannot be normalized (node {node})")]
    ZeroNorm { node: usize, row: usize },

    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("gradients requested before backward was run")]
    BackwardNotRun,

    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn node_suffix(node: Option<usize>) -> String {
    match node {
        Some(n) => format!(" (node {n})"),
        None => String::new(),
    }
}
