//! Reverse-mode automatic differentiation over dense tensors.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointHeader,
    CHECKPOINT_VERSION,
};
pub use error::AutodiffError;
pub use gradcheck::{finite_difference_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{CustomOp, Gradients, Graph, Unary, Var};
pub use params::{ParamId, ParamStore};
pub use scalar::{Precision, Scalar};
pub use tensor::{numel, Tensor};
