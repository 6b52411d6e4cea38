//! Dense row-major tensors with a Wengert-style tape for reverse-mode
//! differentiation, plus the SGD / Adam update rules and weight clipping
//! used to train the encoder, generator and critics.
//!
//! Everything is generic over [`Scalar`] so the same graph can be run at
//! 32-bit precision for training and at 64-bit precision for gradient checks.

mod error;
mod kernels;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{clip_weights, OptimizerState, UpdateRule};
pub use params::{Gradients, Graph, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Grads, Primitive, Tape, Var};
pub use tensor::Tensor;
