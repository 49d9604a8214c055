//! The LaKDNet architecture.
//!
//! A 3x3 convolution lifts the input to `C` channels. Four encoder levels
//! with widths `C, 2C, 4C, 8C` each run `N_l` blocks; between levels the
//! features are pixel-unshuffled and a point-wise convolution sets the next
//! width. The decoder mirrors this with a point-wise expansion followed by
//! pixel shuffle, concatenates the matching encoder output and reduces it
//! point-wise before its blocks. A final 3x3 convolution predicts a
//! three-channel residual that is added to the RGB input.

mod block;
pub mod checkpoint;
mod config;
mod network;
mod params;

pub use block::{block_forward, block_layers, dilated_block_forward, lakd_block_forward, mixer_specs};
pub use checkpoint::Checkpoint;
pub use config::{BlockVariant, InputMode, NetworkConfig};
pub use network::{count_params, init_params, lakdnet_forward, network_layers, LaKDNet, LAYER_NAMES};
pub use params::{BoundParams, LayerDecl, LayerKind, ParamStore};
