//! Differentiable layers: grouped 2-D convolution, channel layer norm,
//! GELU and pixel (un)shuffle.

mod activation;
mod conv;
mod kernels;
mod norm;
mod shuffle;

pub use activation::{gelu, gelu_scalar};
pub use conv::{conv2d, conv2d_forward, ConvSpec};
pub use norm::{layer_norm, LayerNormSpec};
pub use shuffle::{pixel_shuffle, pixel_shuffle_tensor, pixel_unshuffle, pixel_unshuffle_tensor};
