//! Dense row-major tensors and a reverse-mode tape specialised for the small
//! convolutional networks used across the workspace.
//!
//! Everything is generic over [`Real`] so training runs in `f32` while gradient
//! checks can run the same graph in `f64`.

mod graph;
mod kernels;
mod real;
mod tensor;

pub use graph::{Graph, Grads, Var};
pub use kernels::{conv_out_size, matmul};
pub use real::Real;
pub use tensor::Tensor;
