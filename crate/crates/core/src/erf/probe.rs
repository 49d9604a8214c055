use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::map::ErfMap;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::lakdnet::LaKDNet;
use crate::nn::{self, ConvSpec};
use crate::tensor::Tensor;

/// A network whose intermediate features can be probed.
pub trait ErfProbe: Sync {
    fn input_channels(&self) -> usize;

    /// Rejects patch sizes the network cannot process.
    fn check_patch(&self, size: usize) -> Result<()>;

    /// Forward pass from `input` to the feature map named `layer`. The
    /// implementation registers its own parameters as graph constants.
    fn probe(&self, g: &mut Graph, input: Var, layer: &str) -> Result<Var>;
}

impl ErfProbe for LaKDNet {
    fn input_channels(&self) -> usize {
        self.config().input_mode.channels()
    }

    fn check_patch(&self, size: usize) -> Result<()> {
        let m = self.config().spatial_multiple();
        if size < m || !size.is_multiple_of(m) {
            return Err(Error::InvalidArgument(format!(
                "patch size {size} must be a positive multiple of {m} for this network"
            )));
        }
        Ok(())
    }

    fn probe(&self, g: &mut Graph, input: Var, layer: &str) -> Result<Var> {
        let params = self.params().bind(g, false);
        self.forward_to(g, &params, input, layer)
    }
}

/// A plain chain of convolutions, used to check receptive-field arithmetic.
/// Layers are named `conv1`, `conv2`, ...
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub specs: Vec<ConvSpec>,
    pub weights: Vec<Tensor>,
}

impl ConvStack {
    pub fn new(specs: Vec<ConvSpec>, weights: Vec<Tensor>) -> Result<Self> {
        if specs.is_empty() || specs.len() != weights.len() {
            return Err(Error::InvalidArgument("need one weight tensor per layer".into()));
        }
        for (i, (spec, w)) in specs.iter().zip(&weights).enumerate() {
            spec.validate()?;
            if spec.has_bias {
                return Err(Error::InvalidArgument("ConvStack layers carry no bias".into()));
            }
            if w.shape() != spec.weight_shape() {
                return Err(Error::shape("ConvStack weight", w.shape(), &spec.weight_shape()));
            }
            if i > 0 && specs[i - 1].out_channels != spec.in_channels {
                return Err(Error::InvalidArgument(format!("layer {} channel mismatch", i + 1)));
            }
        }
        Ok(ConvStack { specs, weights })
    }

    /// Weights drawn from `[0.5, 1.5)`, so no tap is zero.
    pub fn positive(specs: Vec<ConvSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = specs
            .iter()
            .map(|s| Tensor::uniform(s.weight_shape(), 0.5, 1.5, &mut rng))
            .collect();
        Self::new(specs, weights)
    }

    /// `depth` same-padded bias-free `k x k` layers on `channels` channels.
    pub fn chain(channels: usize, k: usize, dilation: usize, depth: usize, depthwise: bool) -> Vec<ConvSpec> {
        let base = if depthwise {
            ConvSpec::depthwise(channels, k)
        } else {
            ConvSpec::new(channels, channels, k)
        };
        vec![base.with_dilation(dilation).with_bias(false); depth]
    }
}

impl ErfProbe for ConvStack {
    fn input_channels(&self) -> usize {
        self.specs[0].in_channels
    }

    fn check_patch(&self, size: usize) -> Result<()> {
        if size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        Ok(())
    }

    fn probe(&self, g: &mut Graph, input: Var, layer: &str) -> Result<Var> {
        let depth = layer
            .strip_prefix("conv")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| (1..=self.specs.len()).contains(n))
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
        let mut x = input;
        for (spec, w) in self.specs.iter().zip(&self.weights).take(depth) {
            let wv = g.constant(w.clone());
            x = nn::conv2d(g, x, wv, None, spec)?;
        }
        Ok(x)
    }
}

/// Where probe inputs come from.
#[derive(Clone, Debug)]
pub enum InputSource {
    /// Independent uniform noise in `[0, 1)`.
    Uniform,
    /// Random crops of `[C, H, W]` images.
    Images(Vec<Tensor>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfOptions {
    pub layer: String,
    pub patch_size: usize,
    pub n_patches: usize,
    pub seed: u64,
}

fn sample_patch(source: &InputSource, channels: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    match source {
        InputSource::Uniform => Ok(Tensor::uniform([1, channels, size, size], 0.0, 1.0, rng)),
        InputSource::Images(images) => {
            if images.is_empty() {
                return Err(Error::InvalidArgument("no probe images".into()));
            }
            let img = &images[rng.random_range(0..images.len())];
            let (c, h, w) = match img.shape() {
                &[c, h, w] => (c, h, w),
                s => return Err(Error::invalid_shape(s, "probe images must be [C, H, W]")),
            };
            if c != channels || h < size || w < size {
                return Err(Error::invalid_shape(
                    img.shape(),
                    format!("need {channels} channels and at least {size}x{size}"),
                ));
            }
            let top = rng.random_range(0..=h - size);
            let left = rng.random_range(0..=w - size);
            let mut data = Vec::with_capacity(c * size * size);
            for ch in 0..c {
                for y in 0..size {
                    let row = (ch * h + top + y) * w + left;
                    data.extend_from_slice(&img.data()[row..row + size]);
                }
            }
            Tensor::new([1, c, size, size], data)
        }
    }
}

/// `sum_c |d feature_center / d input|` for one patch.
fn probe_patch<P: ErfProbe + ?Sized>(net: &P, patch: Tensor, layer: &str) -> Result<Vec<f64>> {
    let [_, channels, h, w] = patch.dims4()?;
    let mut g = Graph::new();
    let input = g.param(patch);
    let feature = net.probe(&mut g, input, layer)?;
    let [fb, fc, fh, fw] = g.value(feature).dims4()?;
    let mut seed = vec![0.0f32; fb * fc * fh * fw];
    let center = (fh / 2) * fw + fw / 2;
    for c in 0..fc {
        seed[c * fh * fw + center] = 1.0;
    }
    g.backward_with_grad(feature, seed)?;
    let plane = h * w;
    let mut out = vec![0.0f64; plane];
    if let Some(grad) = g.grad(input) {
        for c in 0..channels {
            for (o, v) in out.iter_mut().zip(&grad[c * plane..(c + 1) * plane]) {
                *o += f64::from(v.abs());
            }
        }
    }
    Ok(out)
}

/// Averages per-patch ERFs. Patches are probed in parallel; patch `i` draws
/// its input from stream `i` of the seeded generator, so the result does
/// not depend on scheduling.
pub fn compute_erf<P: ErfProbe + ?Sized>(net: &P, options: &ErfOptions, source: &InputSource) -> Result<ErfMap> {
    net.check_patch(options.patch_size)?;
    if options.n_patches == 0 {
        return Err(Error::InvalidArgument("n_patches must be positive".into()));
    }
    let channels = net.input_channels();
    let size = options.patch_size;
    let maps: Vec<Vec<f64>> = (0..options.n_patches)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(i as u64);
            let patch = sample_patch(source, channels, size, &mut rng)?;
            probe_patch(net, patch, &options.layer)
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0f64; size * size];
    for m in &maps {
        for (s, v) in sum.iter_mut().zip(m) {
            *s += v;
        }
    }
    let n = options.n_patches as f64;
    let values = sum.iter().map(|s| (s / n) as f32).collect();
    ErfMap::new(size, size, values, options.n_patches, options.layer.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erf::erf_support;

    fn options(layer: &str, size: usize, n: usize) -> ErfOptions {
        ErfOptions { layer: layer.into(), patch_size: size, n_patches: n, seed: 1 }
    }

    #[test]
    fn single_depthwise_conv_has_3x3_support() {
        let stack = ConvStack::positive(ConvStack::chain(2, 3, 1, 1, true), 0).unwrap();
        let map = compute_erf(&stack, &options("conv1", 11, 2), &InputSource::Uniform).unwrap();
        let b = erf_support(&map, 0.0).unwrap();
        assert_eq!((b.top, b.left, b.height(), b.width()), (4, 4, 3, 3));
    }

    #[test]
    fn all_ones_kernel_gives_unit_support() {
        let spec = ConvSpec::new(1, 1, 3).with_bias(false);
        let stack = ConvStack::new(vec![spec], vec![Tensor::ones([1, 1, 3, 3])]).unwrap();
        let map = compute_erf(&stack, &options("conv1", 9, 1), &InputSource::Uniform).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let inside = (3..6).contains(&y) && (3..6).contains(&x);
                assert_eq!(map.get(y, x), if inside { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(map.max_value, 1.0);
    }

    #[test]
    fn linear_network_ignores_inputs() {
        let stack = ConvStack::positive(ConvStack::chain(3, 3, 2, 2, false), 4).unwrap();
        let a = compute_erf(&stack, &ErfOptions { seed: 1, ..options("conv2", 16, 3) }, &InputSource::Uniform).unwrap();
        let b = compute_erf(&stack, &ErfOptions { seed: 99, ..options("conv2", 16, 1) }, &InputSource::Uniform).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-30));
        }
    }

    #[test]
    fn rejects_unknown_layer_and_bad_patch() {
        let stack = ConvStack::positive(ConvStack::chain(1, 3, 1, 2, true), 0).unwrap();
        assert!(matches!(
            compute_erf(&stack, &options("conv3", 8, 1), &InputSource::Uniform),
            Err(Error::UnknownLayer(_))
        ));
        assert!(compute_erf(&stack, &options("conv1", 0, 1), &InputSource::Uniform).is_err());
        let net = LaKDNet::new(crate::lakdnet::NetworkConfig::tiny(4, 3), 0).unwrap();
        assert!(compute_erf(&net, &options("bt_neck", 12, 1), &InputSource::Uniform).is_err());
        assert!(compute_erf(&net, &options("nowhere", 16, 1), &InputSource::Uniform).is_err());
    }

    #[test]
    fn image_source_crops() {
        let stack = ConvStack::positive(ConvStack::chain(3, 3, 1, 1, false), 0).unwrap();
        let img = Tensor::from_fn([3, 20, 24], |i| (i % 7) as f32 / 7.0);
        let map = compute_erf(&stack, &options("conv1", 16, 2), &InputSource::Images(vec![img])).unwrap();
        assert_eq!(map.values.len(), 256);
        let too_small = Tensor::zeros([3, 8, 8]);
        assert!(compute_erf(&stack, &options("conv1", 16, 1), &InputSource::Images(vec![too_small])).is_err());
    }
}
