use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {len}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        len: usize,
    },
    #[error("{layer}: expected input {expected}, got shape {got:?}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is detached: nothing on its tape requires a gradient")]
    DetachedGraph,
    #[error("parameter `{name}`: {detail}")]
    Param { name: String, detail: String },
}
