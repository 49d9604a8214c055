use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::image_io;
use crate::tensor::Tensor;

/// Averaged absolute input gradients of one probed layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, non-negative.
    pub values: Vec<f32>,
    pub patch_count: usize,
    pub layer: String,
    pub max_value: f32,
}

/// JSON sidecar written next to the raw map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErfMeta {
    pub height: usize,
    pub width: usize,
    pub patch_count: usize,
    pub layer: String,
    pub max_value: f32,
}

const RAW_FILE: &str = "erf.raw";
const META_FILE: &str = "erf.json";
const PGM_FILE: &str = "erf.pgm";

impl ErfMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, patch_count: usize, layer: impl Into<String>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid_shape(&[height, width], format!("{} values", values.len())));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("ERF values must be finite and non-negative".into()));
        }
        let max_value = values.iter().copied().fold(0.0, f32::max);
        Ok(ErfMap { height, width, values, patch_count, layer: layer.into(), max_value })
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn meta(&self) -> ErfMeta {
        ErfMeta {
            height: self.height,
            width: self.width,
            patch_count: self.patch_count,
            layer: self.layer.clone(),
            max_value: self.max_value,
        }
    }

    /// Raw little-endian `f32` values, row-major.
    pub fn raw_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// `log1p(v) / log1p(max)` scaled to 8 bits.
    pub fn log_image(&self) -> Tensor {
        let denom = f64::from(self.max_value).ln_1p();
        Tensor::from_fn([1, self.height, self.width], |i| {
            if denom > 0.0 {
                (f64::from(self.values[i]).ln_1p() / denom) as f32
            } else {
                0.0
            }
        })
    }

    /// Writes `erf.raw`, `erf.json` and `erf.pgm` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RAW_FILE), self.raw_bytes())?;
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&self.meta())?)?;
        fs::write(dir.join(PGM_FILE), image_io::encode_pnm(&self.log_image())?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ErfMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let bytes = fs::read(dir.join(RAW_FILE))?;
        let expected = meta.height * meta.width * 4;
        if bytes.len() != expected {
            return Err(Error::Format {
                format: "erf raw",
                offset: bytes.len().min(expected),
                reason: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let map = ErfMap::new(meta.height, meta.width, values, meta.patch_count, meta.layer)?;
        if map.max_value != meta.max_value {
            return Err(Error::InvalidArgument(format!(
                "sidecar max {} disagrees with data max {}",
                meta.max_value, map.max_value
            )));
        }
        Ok(map)
    }
}

/// Central horizontal scanline with coordinates mapped onto `[-30, 30]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfProfile {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Maximum of the whole 2-D map.
    pub max_value: f64,
}

pub const PROFILE_HALF_RANGE: f64 = 30.0;

/// Row `floor(H / 2)`, with column `i` placed at `-30 + 60 i / (W - 1)`.
pub fn extract_scanline(map: &ErfMap) -> ErfProfile {
    let row = map.height / 2;
    let w = map.width;
    let xs = (0..w)
        .map(|i| {
            if w > 1 {
                -PROFILE_HALF_RANGE + 2.0 * PROFILE_HALF_RANGE * i as f64 / (w - 1) as f64
            } else {
                -PROFILE_HALF_RANGE
            }
        })
        .collect();
    let ys = map.values[row * w..(row + 1) * w].iter().map(|&v| f64::from(v)).collect();
    ErfProfile { xs, ys, max_value: f64::from(map.max_value) }
}

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.top <= other.top
            && self.left <= other.left
            && self.bottom >= other.bottom
            && self.right >= other.right
    }
}

/// Tight box around entries strictly above `threshold`; `None` when empty.
pub fn erf_support(map: &ErfMap, threshold: f32) -> Option<BoundingBox> {
    let mut found: Option<BoundingBox> = None;
    for y in 0..map.height {
        for x in 0..map.width {
            if map.get(y, x) > threshold {
                let b = found.get_or_insert(BoundingBox { top: y, left: x, bottom: y, right: x });
                b.top = b.top.min(y);
                b.left = b.left.min(x);
                b.bottom = b.bottom.max(y);
                b.right = b.right.max(x);
            }
        }
    }
    found
}
