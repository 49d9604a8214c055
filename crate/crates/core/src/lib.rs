//! Large-kernel depth-wise convolution deblurring networks and effective
//! receptive field measurement.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autograd`]: dense `f32` tensors and a reverse-mode tape.
//! - [`nn`]: grouped/dilated convolution, channel layer norm, GELU, pixel
//!   (un)shuffle.
//! - [`lakdnet`]: the LaKD block, its dilated ablation variant, the 4-level
//!   U-shaped network, parameter initialization and checkpoints.
//! - [`erf`]: effective receptive field probing by input-gradient averaging.
//! - [`erfmeter`]: generalized-normal curve fitting and the ERFM score.
//! - [`pipeline`]: synthetic blur data, losses, AdamW, training, PSNR and
//!   image I/O.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting side
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod erf;
pub mod erfmeter;
pub mod error;
pub mod lakdnet;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
