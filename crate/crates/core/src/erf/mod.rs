//! Effective receptive field probing.
//!
//! For each input patch the probed feature map is seeded with gradient 1 at
//! its spatial center on every channel. The absolute input gradient, summed
//! over input channels, is averaged across patches to form an [`ErfMap`].

mod map;
mod probe;

pub use map::{erf_support, extract_scanline, BoundingBox, ErfMap, ErfMeta, ErfProfile};
pub use probe::{compute_erf, ConvStack, ErfOptions, ErfProbe, InputSource};
