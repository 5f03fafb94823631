use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("tensor shape {shape:?} does not match {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("gradient for parameter `{name}` has shape {got:?}, expected {expected:?}")]
    GradientShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
