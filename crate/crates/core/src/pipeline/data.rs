//! Synthetic blur pairs, procedural textures and training crops.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    Gaussian,
    Disk,
}

/// Blur applied to sharp images. `size` is the gaussian sigma or the disk
/// radius in pixels; when `jitter` is set each sample draws its own size
/// uniformly from that range instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurSpec {
    pub kind: BlurKind,
    pub size: f64,
    #[serde(default)]
    pub jitter: Option<[f64; 2]>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Emit two half-aperture views stacked on channels (6-channel input).
    #[serde(default)]
    pub dual_pixel: bool,
}

impl Default for BlurSpec {
    fn default() -> Self {
        BlurSpec { kind: BlurKind::Gaussian, size: 1.5, jitter: Some([1.0, 2.0]), rng_seed: 0, dual_pixel: false }
    }
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.size) {
            return Err(Error::Config(format!("blur size {} must be finite and >= 0", self.size)));
        }
        if let Some([lo, hi]) = self.jitter {
            if !ok(lo) || !ok(hi) || lo > hi {
                return Err(Error::Config(format!("blur jitter [{lo}, {hi}] is not a valid range")));
            }
        }
        Ok(())
    }

    fn sample_size(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.jitter {
            Some([lo, hi]) if hi > lo => rng.random_range(lo..=hi),
            Some([lo, _]) => lo,
            None => self.size,
        }
    }
}

/// Normalized `[K, K]` blur kernel with odd `K`. A size of zero gives the
/// delta kernel.
pub fn blur_kernel(kind: BlurKind, size: f64) -> Result<Tensor> {
    if !size.is_finite() || size < 0.0 {
        return Err(Error::InvalidArgument(format!("blur size {size} must be finite and >= 0")));
    }
    let half = match kind {
        BlurKind::Gaussian => (3.0 * size).ceil() as usize,
        BlurKind::Disk => size.ceil() as usize,
    };
    let k = 2 * half + 1;
    let weights: Vec<f64> = (0..k * k)
        .map(|i| {
            let y = (i / k) as f64 - half as f64;
            let x = (i % k) as f64 - half as f64;
            let r2 = x * x + y * y;
            match kind {
                _ if size == 0.0 => f64::from(r2 == 0.0),
                BlurKind::Gaussian => (-r2 / (2.0 * size * size)).exp(),
                BlurKind::Disk => f64::from(r2 <= size * size),
            }
        })
        .collect();
    normalize(k, weights)
}

fn normalize(k: usize, weights: Vec<f64>) -> Result<Tensor> {
    let total: f64 = weights.iter().sum();
    Tensor::new([k, k], weights.iter().map(|w| (w / total) as f32).collect())
}

/// Left and right halves of `kernel` (center column shared), each
/// renormalized: a crude model of the two dual-pixel sub-apertures.
pub fn split_kernel(kernel: &Tensor) -> Result<(Tensor, Tensor)> {
    let k = kernel.shape()[0];
    let half = k / 2;
    let side = |left: bool| {
        let w = kernel
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let x = i % k;
                let keep = if left { x <= half } else { x >= half };
                if keep { f64::from(v) } else { 0.0 }
            })
            .collect();
        normalize(k, w)
    };
    Ok((side(true)?, side(false)?))
}

/// Mirror index into `[0, n)` without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Convolves every channel of a `[C, H, W]` image with a square kernel,
/// reflecting at the borders.
pub fn blur_image(image: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::invalid_shape(s, "expected [C, H, W]")),
    };
    let k = match kernel.shape() {
        &[a, b] if a == b && a % 2 == 1 => a,
        s => return Err(Error::invalid_shape(s, "kernel must be square with odd size")),
    };
    let half = (k / 2) as isize;
    let src = image.data();
    let taps = kernel.data();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let plane = &src[ch * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for ky in 0..k {
                    let sy = reflect(y as isize + ky as isize - half, h);
                    for kx in 0..k {
                        let sx = reflect(x as isize + kx as isize - half, w);
                        acc += f64::from(taps[ky * k + kx]) * f64::from(plane[sy * w + sx]);
                    }
                }
                out[(ch * h + y) * w + x] = acc as f32;
            }
        }
    }
    Tensor::new([c, h, w], out)
}

/// One training example; both tensors are `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub blurry: Tensor,
    pub sharp: Tensor,
}

/// Where sharp images come from.
#[derive(Clone, Debug)]
pub enum SharpSource {
    Images(Vec<Tensor>),
    /// Deterministic random shapes and gratings of the given size.
    Procedural { height: usize, width: usize, seed: u64 },
}

impl SharpSource {
    /// All `.ppm` / `.pgm` files of a directory in name order.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
            })
            .collect();
        if paths.is_empty() {
            let msg = format!("no .ppm or .pgm images in {}", dir.display());
            return Err(std::io::Error::new(std::io::ErrorKind::NotFound, msg).into());
        }
        paths.sort();
        let images = paths.iter().map(image_io::read_image).collect::<Result<Vec<_>>>()?;
        Ok(SharpSource::Images(images))
    }

    fn sharp(&self, i: usize) -> Result<Tensor> {
        match self {
            SharpSource::Images(images) => {
                if images.is_empty() {
                    return Err(Error::InvalidArgument("sharp image source is empty".into()));
                }
                let img = &images[i % images.len()];
                match img.shape() {
                    &[3, _, _] => Ok(img.clone()),
                    &[1, h, w] => {
                        let plane = img.data();
                        Tensor::new([3, h, w], plane.iter().chain(plane).chain(plane).copied().collect())
                    }
                    s => Err(Error::invalid_shape(s, "expected gray or RGB image")),
                }
            }
            &SharpSource::Procedural { height, width, seed } => {
                if height == 0 || width == 0 {
                    return Err(Error::InvalidArgument("procedural images need a positive size".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                Ok(procedural_texture(height, width, &mut rng))
            }
        }
    }
}

/// A `[3, H, W]` image in `[0, 1]`: a smooth background with random
/// rectangles, disks and one sinusoidal grating patch.
pub fn procedural_texture<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Tensor {
    let (h, w) = (height as f64, width as f64);
    let mut color = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let (c0, c1) = (color(), color());
    let mut img = vec![0.0f64; 3 * height * width];
    for y in 0..height {
        for x in 0..width {
            let t = (x as f64 / w + y as f64 / h) / 2.0;
            for ch in 0..3 {
                img[(ch * height + y) * width + x] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }
    let n_shapes = rng.random_range(6..=12);
    for _ in 0..n_shapes {
        let col = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let (cy, cx) = (rng.random::<f64>() * h, rng.random::<f64>() * w);
        let (ry, rx) = (rng.random_range(0.05..0.3) * h, rng.random_range(0.05..0.3) * w);
        let disk = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disk { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    for ch in 0..3 {
                        img[(ch * height + y) * width + x] = col[ch];
                    }
                }
            }
        }
    }
    let period = rng.random_range(3.0..8.0);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (y0, x0) = (rng.random::<f64>() * h / 2.0, rng.random::<f64>() * w / 2.0);
    let (sy, sx) = (angle.sin(), angle.cos());
    for y in y0 as usize..((y0 + h / 3.0) as usize).min(height) {
        for x in x0 as usize..((x0 + w / 3.0) as usize).min(width) {
            let phase = (x as f64 * sx + y as f64 * sy) * std::f64::consts::TAU / period;
            let v = 0.5 + 0.5 * phase.sin();
            for ch in 0..3 {
                img[(ch * height + y) * width + x] = v;
            }
        }
    }
    Tensor::new([3, height, width], img.into_iter().map(|v| v as f32).collect()).expect("sized above")
}

/// `n` (blurry, sharp) pairs. Sample `i` uses sharp image `i` (cycling over
/// a finite source) and its own blur size drawn from stream `i`.
pub fn synth_dataset(source: &SharpSource, spec: &BlurSpec, n: usize) -> Result<Vec<Pair>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    if let SharpSource::Images(images) = source {
        if images.is_empty() {
            return Err(Error::InvalidArgument("sharp image source is empty".into()));
        }
    }
    (0..n)
        .map(|i| {
            let sharp = source.sharp(i)?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            rng.set_stream(i as u64);
            let kernel = blur_kernel(spec.kind, spec.sample_size(&mut rng))?;
            let blurry = if spec.dual_pixel {
                let (left, right) = split_kernel(&kernel)?;
                let l = blur_image(&sharp, &left)?;
                let r = blur_image(&sharp, &right)?;
                let (h, w) = (sharp.shape()[1], sharp.shape()[2]);
                Tensor::new([6, h, w], l.into_data().into_iter().chain(r.into_data()).collect())?
            } else {
                blur_image(&sharp, &kernel)?
            };
            Ok(Pair { blurry, sharp })
        })
        .collect()
}

fn crop(img: &Tensor, top: usize, left: usize, size: usize, flip_h: bool, flip_v: bool, out: &mut Vec<f32>) {
    let (c, w) = (img.shape()[0], img.shape()[2]);
    let data = img.data();
    for ch in 0..c {
        for y in 0..size {
            let sy = if flip_v { size - 1 - y } else { y };
            let row = &data[((ch * img.shape()[1]) + top + sy) * w + left..][..size];
            if flip_h {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
}

/// A batch of random `size x size` crops fully inside the images, with
/// random horizontal and vertical flips. Returns `([B, Cin, P, P], [B, 3, P, P])`.
pub fn sample_batch<R: Rng + ?Sized>(pairs: &[Pair], size: usize, batch: usize, rng: &mut R) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() || batch == 0 || size == 0 {
        return Err(Error::InvalidArgument("need pairs, a batch size and a patch size".into()));
    }
    let cin = pairs[0].blurry.shape()[0];
    let mut inputs = Vec::with_capacity(batch * cin * size * size);
    let mut targets = Vec::with_capacity(batch * 3 * size * size);
    for _ in 0..batch {
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let (h, w) = (pair.sharp.shape()[1], pair.sharp.shape()[2]);
        if h < size || w < size || pair.blurry.shape()[0] != cin {
            return Err(Error::invalid_shape(pair.sharp.shape(), format!("cannot crop {size}x{size}")));
        }
        let top = rng.random_range(0..=h - size);
        let left = rng.random_range(0..=w - size);
        let (fh, fv) = (rng.random_bool(0.5), rng.random_bool(0.5));
        crop(&pair.blurry, top, left, size, fh, fv, &mut inputs);
        crop(&pair.sharp, top, left, size, fh, fv, &mut targets);
    }
    Ok((Tensor::new([batch, cin, size, size], inputs)?, Tensor::new([batch, 3, size, size], targets)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum(t: &Tensor) -> f64 {
        t.data().iter().map(|&v| f64::from(v)).sum()
    }

    #[test]
    fn kernels_are_normalized_and_odd() {
        for kind in [BlurKind::Gaussian, BlurKind::Disk] {
            for size in [0.0, 0.5, 1.0, 1.7, 3.0] {
                let k = blur_kernel(kind, size).unwrap();
                assert_eq!(k.shape()[0] % 2, 1);
                assert!((sum(&k) - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(blur_kernel(BlurKind::Gaussian, 1.0).unwrap().shape(), &[7, 7]);
        assert!(blur_kernel(BlurKind::Disk, -1.0).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = procedural_texture(12, 9, &mut rng);
        let k = blur_kernel(BlurKind::Gaussian, 0.0).unwrap();
        assert_eq!(blur_image(&img, &k).unwrap(), img);
    }

    #[test]
    fn constant_image_is_fixed() {
        let img = Tensor::full([3, 5, 6], 0.3);
        for kind in [BlurKind::Gaussian, BlurKind::Disk] {
            let out = blur_image(&img, &blur_kernel(kind, 2.0).unwrap()).unwrap();
            assert!(out.max_abs_diff(&img).unwrap() < 1e-6);
        }
    }

    #[test]
    fn gaussian_on_delta_gives_center_weight() {
        let mut img = Tensor::zeros([1, 15, 15]);
        img.data_mut()[7 * 15 + 7] = 1.0;
        let out = blur_image(&img, &blur_kernel(BlurKind::Gaussian, 1.0).unwrap()).unwrap();
        // direct evaluation of the normalized 7x7 gaussian at its center
        let z: f64 = (-3..=3)
            .flat_map(|y: i32| (-3..=3).map(move |x: i32| (-f64::from(x * x + y * y) / 2.0).exp()))
            .sum();
        assert!((f64::from(out.data()[7 * 15 + 7]) - 1.0 / z).abs() < 1e-7);
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<_> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, [2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn dataset_is_deterministic_and_sized() {
        let src = SharpSource::Procedural { height: 16, width: 16, seed: 3 };
        let spec = BlurSpec::default();
        let a = synth_dataset(&src, &spec, 4).unwrap();
        let b = synth_dataset(&src, &spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].sharp, a[1].sharp);
        assert!(a.iter().all(|p| p.sharp.data().iter().all(|v| (0.0..=1.0).contains(v))));
        let dp = synth_dataset(&src, &BlurSpec { dual_pixel: true, ..spec }, 1).unwrap();
        assert_eq!(dp[0].blurry.shape(), &[6, 16, 16]);
    }

    #[test]
    fn empty_source_rejected() {
        let spec = BlurSpec::default();
        assert!(synth_dataset(&SharpSource::Images(vec![]), &spec, 3).is_err());
        let src = SharpSource::Procedural { height: 8, width: 8, seed: 0 };
        assert!(synth_dataset(&src, &spec, 0).is_err());
    }

    #[test]
    fn crops_align_and_stay_inside() {
        let src = SharpSource::Procedural { height: 20, width: 24, seed: 1 };
        let pairs: Vec<Pair> = synth_dataset(&src, &BlurSpec::default(), 2)
            .unwrap()
            .into_iter()
            .map(|p| Pair { blurry: p.sharp.clone(), sharp: p.sharp })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = sample_batch(&pairs, 8, 5, &mut rng).unwrap();
        assert_eq!(x.shape(), &[5, 3, 8, 8]);
        assert_eq!(x, y);
        assert!(sample_batch(&pairs, 32, 1, &mut rng).is_err());
    }
}
