//! Whole-image and tiled inference.

use super::data::reflect;
use super::metrics::psnr;
use super::data::Pair;
use crate::error::{Error, Result};
use crate::lakdnet::LaKDNet;
use crate::tensor::Tensor;

pub const TILE_OVERLAP: usize = 16;

/// Reflect-pads a `[C, H, W]` image on the bottom and right to `[C, hp, wp]`.
pub fn pad_reflect(image: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] if h > 0 && w > 0 => (c, h, w),
        s => return Err(Error::invalid_shape(s, "expected non-empty [C, H, W]")),
    };
    if hp < h || wp < w {
        return Err(Error::InvalidArgument("padding cannot shrink an image".into()));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * hp * wp);
    for ch in 0..c {
        for y in 0..hp {
            let sy = reflect(y as isize, h);
            let row = &src[(ch * h + sy) * w..][..w];
            out.extend((0..wp).map(|x| row[reflect(x as isize, w)]));
        }
    }
    Tensor::new([c, hp, wp], out)
}

fn crop(image: &Tensor, top: usize, left: usize, th: usize, tw: usize) -> Tensor {
    let (c, w) = (image.shape()[0], image.shape()[2]);
    let h = image.shape()[1];
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        for y in 0..th {
            out.extend_from_slice(&image.data()[(ch * h + top + y) * w + left..][..tw]);
        }
    }
    Tensor::new([1, c, th, tw], out).expect("sized above")
}

/// Tile origins covering `extent` with windows of `tile` overlapping by at
/// least `overlap`; the last window is flush with the end.
fn tile_starts(extent: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < extent).collect();
    starts.push(extent - tile);
    starts
}

/// Restores a `[C, H, W]` image. The input is reflect-padded to the network's
/// size multiple; images larger than `tile` are processed in overlapping
/// tiles whose predictions are averaged.
pub fn infer_image(net: &LaKDNet, image: &Tensor, tile: usize) -> Result<Tensor> {
    let channels = net.config().input_mode.channels();
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::invalid_shape(s, "expected [C, H, W]")),
    };
    if c != channels {
        return Err(Error::invalid_shape(image.shape(), format!("network expects {channels} channels")));
    }
    let m = net.config().spatial_multiple();
    if tile == 0 || !tile.is_multiple_of(m) || tile <= TILE_OVERLAP {
        return Err(Error::InvalidArgument(format!(
            "tile {tile} must be a multiple of {m} larger than the {TILE_OVERLAP}px overlap"
        )));
    }
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let padded = pad_reflect(image, hp, wp)?;
    let (th, tw) = (tile.min(hp), tile.min(wp));
    let mut acc = vec![0.0f64; 3 * hp * wp];
    let mut count = vec![0u32; hp * wp];
    for &top in &tile_starts(hp, th, TILE_OVERLAP) {
        for &left in &tile_starts(wp, tw, TILE_OVERLAP) {
            let out = net.predict(&crop(&padded, top, left, th, tw))?;
            let od = out.data();
            for ch in 0..3 {
                for y in 0..th {
                    for x in 0..tw {
                        acc[(ch * hp + top + y) * wp + left + x] += f64::from(od[(ch * th + y) * tw + x]);
                    }
                }
            }
            for y in 0..th {
                for x in 0..tw {
                    count[(top + y) * wp + left + x] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let i = y * wp + x;
                out.push((acc[ch * hp * wp + i] / f64::from(count[i])) as f32);
            }
        }
    }
    Tensor::new([3, h, w], out)
}

/// Mean PSNR of the blurry inputs and of the clamped restorations against
/// the sharp targets, at peak 1.
pub fn evaluate(net: &LaKDNet, pairs: &[Pair], tile: usize) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let (mut before, mut after) = (0.0, 0.0);
    for pair in pairs {
        let rgb = Tensor::new(
            pair.sharp.shape(),
            pair.blurry.data()[..pair.sharp.numel()].to_vec(),
        )?;
        before += psnr(&rgb, &pair.sharp, 1.0)?;
        let mut restored = infer_image(net, &pair.blurry, tile)?;
        restored.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        after += psnr(&restored, &pair.sharp, 1.0)?;
    }
    let n = pairs.len() as f64;
    Ok((before / n, after / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lakdnet::NetworkConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> LaKDNet {
        let mut net = LaKDNet::new(NetworkConfig::tiny(4, 3), 0).unwrap();
        net.params_mut().get_mut("out.weight").unwrap().data_mut().fill(0.0);
        net
    }

    #[test]
    fn tile_layout() {
        assert_eq!(tile_starts(64, 64, 16), [0]);
        assert_eq!(tile_starts(40, 64, 16), [0]);
        assert_eq!(tile_starts(100, 32, 16), [0, 16, 32, 48, 64, 68]);
        assert_eq!(tile_starts(96, 48, 16), [0, 32, 48]);
    }

    #[test]
    fn identity_network_round_trips_odd_sizes() {
        let net = identity_net();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::uniform([3, 37, 53], 0.0, 1.0, &mut rng);
        for tile in [24, 32, 64] {
            let out = infer_image(&net, &img, tile).unwrap();
            assert!(out.max_abs_diff(&img).unwrap() < 1e-6, "tile {tile}");
        }
    }

    #[test]
    fn single_tile_matches_predict() {
        let net = LaKDNet::new(NetworkConfig::tiny(4, 3), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::uniform([3, 16, 24], 0.0, 1.0, &mut rng);
        let whole = net.predict(&img.clone().reshape([1, 3, 16, 24]).unwrap()).unwrap();
        let tiled = infer_image(&net, &img, 64).unwrap();
        assert_eq!(tiled.data(), whole.data());
    }

    #[test]
    fn reflect_padding_mirrors() {
        let img = Tensor::new([1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_reflect(&img, 2, 6).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = identity_net();
        assert!(infer_image(&net, &Tensor::zeros([1, 8, 8]), 32).is_err());
        assert!(infer_image(&net, &Tensor::zeros([3, 8, 8]), 12).is_err());
        assert!(infer_image(&net, &Tensor::zeros([3, 8, 8]), 16).is_err());
    }
}
