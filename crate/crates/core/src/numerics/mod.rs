//! Dense 64-bit tensors, the forward kernels the model needs, and a tape for
//! reverse-mode gradients.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, FdReport};
pub use kernels::{scatter_softmax, scatter_sum, sigmoid, softmax_rows};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("segment id {id} out of range for {num_segments} segments")]
    SegmentOutOfRange { id: usize, num_segments: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
