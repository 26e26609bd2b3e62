//! A small tape-based reverse-mode differentiation engine.
//!
//! The op set is deliberately narrow: affine maps, 2D convolution, a handful of
//! activations, the losses the tool-imagination model needs, and the tensor
//! plumbing to glue them together. Values are dense row-major tensors generic
//! over [`Real`] so the same graph code runs in `f32` for training and `f64` for
//! gradient checking.

mod adam;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod opcheck;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, to_f64_vec, GradCheckReport, DEFAULT_STEP, REL_ERR_FLOOR};
pub use graph::{Graph, Var};
pub use opcheck::check_every_op;
pub use real::Real;
pub use tensor::Tensor;

/// Lower clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;
