use super::block::{apply_conv, block_forward, block_layers};
use super::config::NetworkConfig;
use super::params::{BoundParams, LayerDecl, ParamStore};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec};
use crate::tensor::Tensor;

/// Probe points exposed by [`LaKDNet::forward_to`]. `bt_neck` is the
/// bottleneck feature right before the first decoder upsampling.
pub const LAYER_NAMES: &[&str] = &[
    "intro", "enc1", "enc2", "enc3", "enc4", "bt_neck", "dec3", "dec2", "dec1", "out",
];

const OUTPUT_CHANNELS: usize = 3;

fn intro_spec(config: &NetworkConfig) -> ConvSpec {
    ConvSpec::new(config.input_mode.channels(), config.base_channels, 3)
}

fn out_spec(config: &NetworkConfig) -> ConvSpec {
    ConvSpec::new(config.base_channels, OUTPUT_CHANNELS, 3)
}

/// Point-wise channel adjust after unshuffling level `level` (0-based).
fn down_spec(config: &NetworkConfig, level: usize) -> ConvSpec {
    let r2 = config.downsample_factor * config.downsample_factor;
    ConvSpec::pointwise(config.channels(level) * r2, config.channels(level + 1))
}

/// Point-wise expansion before shuffling from level `level + 1` to `level`.
fn up_spec(config: &NetworkConfig, level: usize) -> ConvSpec {
    let r2 = config.downsample_factor * config.downsample_factor;
    ConvSpec::pointwise(config.channels(level + 1), config.channels(level) * r2)
}

/// Point-wise reduction of the concatenated skip at level `level`.
fn merge_spec(config: &NetworkConfig, level: usize) -> ConvSpec {
    ConvSpec::pointwise(2 * config.channels(level), config.channels(level))
}

/// Every learnable layer, in initialization order.
pub fn network_layers(config: &NetworkConfig) -> Vec<LayerDecl> {
    let mut layers = vec![LayerDecl::conv("intro", intro_spec(config))];
    for level in 0..NetworkConfig::LEVELS {
        for i in 0..config.block_counts[level] {
            layers.extend(block_layers(&format!("enc{}.{i}", level + 1), config.channels(level), config));
        }
        if level + 1 < NetworkConfig::LEVELS {
            layers.push(LayerDecl::conv(format!("down{}", level + 1), down_spec(config, level)));
        }
    }
    for level in (0..NetworkConfig::LEVELS - 1).rev() {
        layers.push(LayerDecl::conv(format!("up{}", level + 1), up_spec(config, level)));
        layers.push(LayerDecl::conv(format!("merge{}", level + 1), merge_spec(config, level)));
        for i in 0..config.block_counts[level] {
            layers.extend(block_layers(&format!("dec{}.{i}", level + 1), config.channels(level), config));
        }
    }
    layers.push(LayerDecl::conv("out", out_spec(config)));
    layers
}

/// Exact number of learnable scalars.
pub fn count_params(config: &NetworkConfig) -> usize {
    network_layers(config).iter().map(LayerDecl::num_params).sum()
}

pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    Ok(ParamStore::init(&network_layers(config), seed))
}

fn check_input(config: &NetworkConfig, input: &Tensor) -> Result<()> {
    let [_, c, h, w] = input.dims4()?;
    if c != config.input_mode.channels() {
        return Err(Error::invalid_shape(
            input.shape(),
            format!("{:?} input needs {} channels", config.input_mode, config.input_mode.channels()),
        ));
    }
    let m = config.spatial_multiple();
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(Error::invalid_shape(
            input.shape(),
            format!("height and width must be positive multiples of {m}"),
        ));
    }
    Ok(())
}

/// Runs the network up to `stop` (a name from [`LAYER_NAMES`]) or, when
/// `stop` is `None`, to the restored image `I_rgb + I_out`.
fn run(
    g: &mut Graph,
    input: Var,
    params: &BoundParams,
    config: &NetworkConfig,
    stop: Option<&str>,
) -> Result<Var> {
    if let Some(name) = stop {
        if !LAYER_NAMES.contains(&name) {
            return Err(Error::UnknownLayer(name.to_string()));
        }
    }
    config.validate()?;
    check_input(config, g.value(input))?;
    let r = config.downsample_factor;

    let mut x = apply_conv(g, params, "intro", input, &intro_spec(config))?;
    if stop == Some("intro") {
        return Ok(x);
    }
    let mut skips = Vec::with_capacity(NetworkConfig::LEVELS - 1);
    for level in 0..NetworkConfig::LEVELS {
        for i in 0..config.block_counts[level] {
            x = block_forward(g, x, params, &format!("enc{}.{i}", level + 1), config)?;
        }
        let tag = format!("enc{}", level + 1);
        if stop == Some(tag.as_str()) || (level + 1 == NetworkConfig::LEVELS && stop == Some("bt_neck")) {
            return Ok(x);
        }
        if level + 1 < NetworkConfig::LEVELS {
            skips.push(x);
            let down = nn::pixel_unshuffle(g, x, r)?;
            x = apply_conv(g, params, &format!("down{}", level + 1), down, &down_spec(config, level))?;
        }
    }
    for level in (0..NetworkConfig::LEVELS - 1).rev() {
        let up = apply_conv(g, params, &format!("up{}", level + 1), x, &up_spec(config, level))?;
        let up = nn::pixel_shuffle(g, up, r)?;
        let merged = g.concat_channels(&[up, skips[level]])?;
        x = apply_conv(g, params, &format!("merge{}", level + 1), merged, &merge_spec(config, level))?;
        for i in 0..config.block_counts[level] {
            x = block_forward(g, x, params, &format!("dec{}.{i}", level + 1), config)?;
        }
        if stop == Some(format!("dec{}", level + 1).as_str()) {
            return Ok(x);
        }
    }
    let residual = apply_conv(g, params, "out", x, &out_spec(config))?;
    if stop == Some("out") {
        return Ok(residual);
    }
    let rgb = if config.input_mode.channels() == OUTPUT_CHANNELS {
        input
    } else {
        g.slice_channels(input, 0, OUTPUT_CHANNELS)?
    };
    g.add(rgb, residual)
}

/// Full forward pass: `Y = I_rgb + LaKDNet(I)` where `I_rgb` is the first
/// three input channels.
pub fn lakdnet_forward(g: &mut Graph, input: Var, params: &BoundParams, config: &NetworkConfig) -> Result<Var> {
    run(g, input, params, config, None)
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LaKDNet {
    config: NetworkConfig,
    params: ParamStore,
}

impl LaKDNet {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(LaKDNet { config, params })
    }

    /// Wraps existing parameters after checking every expected tensor is
    /// present with the right shape.
    pub fn from_params(config: NetworkConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = ParamStore::init(&network_layers(&config), 0);
        for (name, t) in reference.iter() {
            let found = params.get(name)?;
            if found.shape() != t.shape() {
                return Err(Error::shape("parameter", found.shape(), t.shape()));
            }
        }
        Ok(LaKDNet { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn forward(&self, g: &mut Graph, params: &BoundParams, input: Var) -> Result<Var> {
        run(g, input, params, &self.config, None)
    }

    pub fn forward_to(&self, g: &mut Graph, params: &BoundParams, input: Var, layer: &str) -> Result<Var> {
        run(g, input, params, &self.config, Some(layer))
    }

    /// Inference on a `[B, C, H, W]` batch without gradient tracking.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.params.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &params, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lakdnet::config::InputMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Per-block cost `4c^2 + 2ck^2 + 32c`: three norms (6c), two depth-wise
    /// k x k (2ck^2 + 2c), four point-wise (4c^2 + 4c), two depth-wise 3x3
    /// (18c + 2c).
    fn block_cost(c: usize, k: usize) -> usize {
        6 * c + (2 * c * k * k + 2 * c) + (4 * c * c + 4 * c) + (18 * c + 2 * c)
    }

    #[test]
    fn hand_count_tiny_network() {
        // C = 8, blocks [1, 1, 1, 1], k = 3
        let blocks = block_cost(8, 3) + block_cost(16, 3) + block_cost(32, 3) + block_cost(64, 3);
        let dec_blocks = block_cost(32, 3) + block_cost(16, 3) + block_cost(8, 3);
        let intro = 3 * 8 * 9 + 8;
        let out = 8 * 3 * 9 + 3;
        let down = (32 * 16 + 16) + (64 * 32 + 32) + (128 * 64 + 64);
        let up = (64 * 128 + 128) + (32 * 64 + 64) + (16 * 32 + 32);
        let merge = (64 * 32 + 32) + (32 * 16 + 16) + (16 * 8 + 8);
        let hand = blocks + dec_blocks + intro + out + down + up + merge;
        assert_eq!(hand, 60963);
        let config = NetworkConfig::tiny(8, 3);
        assert_eq!(count_params(&config), hand);
        assert_eq!(init_params(&config, 0).unwrap().num_scalars(), hand);
    }

    #[test]
    fn count_is_additive_and_dual_pixel_adds_first_conv_inputs() {
        let base = NetworkConfig::tiny(8, 3);
        let more = NetworkConfig { block_counts: [2, 1, 1, 1], ..base.clone() };
        // one extra block at level 1 in both encoder and decoder
        assert_eq!(count_params(&more) - count_params(&base), 2 * block_cost(8, 3));
        let dual = NetworkConfig { input_mode: InputMode::DualPixel, ..base.clone() };
        assert_eq!(count_params(&dual) - count_params(&base), 3 * 8 * 9);
    }

    #[test]
    fn shapes_through_the_network() {
        let net = LaKDNet::new(NetworkConfig::tiny(4, 3), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::uniform([1, 3, 64, 64], 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let params = net.params().bind(&mut g, false);
        let xv = g.constant(x);
        let bt = net.forward_to(&mut g, &params, xv, "bt_neck").unwrap();
        assert_eq!(g.shape(bt), &[1, 32, 8, 8]);
        let y = net.forward(&mut g, &params, xv).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 64, 64]);
        assert!(matches!(
            net.forward_to(&mut g, &params, xv, "nope"),
            Err(Error::UnknownLayer(_))
        ));
    }

    #[test]
    fn zero_final_projection_is_identity_on_rgb() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [InputMode::Single, InputMode::DualPixel] {
            let config = NetworkConfig { input_mode: mode, ..NetworkConfig::tiny(4, 3) };
            let mut net = LaKDNet::new(config, 2).unwrap();
            net.params_mut().get_mut("out.weight").unwrap().data_mut().fill(0.0);
            net.params_mut().get_mut("out.bias").unwrap().data_mut().fill(0.0);
            let x = Tensor::uniform([2, mode.channels(), 16, 16], 0.0, 1.0, &mut rng);
            let y = net.predict(&x).unwrap();
            let plane = 16 * 16;
            for b in 0..2 {
                let src = &x.data()[b * mode.channels() * plane..][..3 * plane];
                assert_eq!(&y.data()[b * 3 * plane..][..3 * plane], src);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = LaKDNet::new(NetworkConfig::tiny(4, 3), 1).unwrap();
        assert!(net.predict(&Tensor::zeros([1, 3, 12, 16])).is_err());
        assert!(net.predict(&Tensor::zeros([1, 6, 16, 16])).is_err());
    }

    #[test]
    fn from_params_checks_layout() {
        let net = LaKDNet::new(NetworkConfig::tiny(4, 3), 1).unwrap();
        let params = net.params().clone();
        assert!(LaKDNet::from_params(NetworkConfig::tiny(4, 3), params.clone()).is_ok());
        assert!(LaKDNet::from_params(NetworkConfig::tiny(4, 5), params).is_err());
    }
}
