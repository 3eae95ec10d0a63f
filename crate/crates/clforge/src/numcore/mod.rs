//! Deterministic numeric core: dense f64 tensors, reverse-mode autodiff,
//! an adaptive-moment optimizer, and seeded pseudo-randomness.

mod gradcheck;
pub mod kernels;
mod optim;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference, grad_close, max_rel_error};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use rng::Rng;
pub use tape::{AttnMask, Gradients, Tape, Var};
pub use tensor::Tensor;
