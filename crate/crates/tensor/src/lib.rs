//! Minimal dense tensors with tape-based reverse-mode differentiation, plus
//! the layers needed for small image-to-image networks: convolution,
//! transposed convolution, batch normalization, dense layers and pointwise
//! activations.
//!
//! Convolutions use cross-correlation semantics (the kernel is not flipped).

mod error;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod par;
mod real;
pub mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::grad_check;
pub use nn::{Activation, Ctx, LayerSpec, Mode, ParamId, ParamStore};
pub use optim::{Adam, AdamState};
pub use par::Exec;
pub use real::{gemm, Real};
pub use rng::SeedSplitter;
pub use tape::{ChannelStats, Gradients, Tape, Var};
pub use tensor::Tensor;
