//! LaKD block and its dilated-mixer ablation variant.
//!
//! Both variants share one skeleton. A feature mixer acts on
//! `z0 = LN(F_prev)`, each step adding `z0` back (inner shortcut), and its
//! result `z_last` joins the block input as `M = F_prev + z_last` (middle
//! shortcut). The gated fusion stage then produces
//! `F_out = F_prev + LN(gelu(dw3(W1(t))) * dw3(W2(t)))` with `t = LN(M)`.
//!
//! The LaKD mixer applies depth-wise k x k, point-wise, depth-wise k x k and
//! point-wise convolutions in that order. The dilated mixer applies three
//! dense 3x3 convolutions with dilation 1, 2 and 3.

use super::config::{BlockVariant, NetworkConfig};
use super::params::{BoundParams, LayerDecl};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec, LayerNormSpec};

/// Convolutions of the feature mixer, in application order.
pub fn mixer_specs(channels: usize, config: &NetworkConfig) -> Vec<(&'static str, ConvSpec)> {
    let k = config.mixer_kernel;
    match config.block_variant {
        BlockVariant::Lakd => vec![
            ("dw1", ConvSpec::depthwise(channels, k)),
            ("pw1", ConvSpec::pointwise(channels, channels)),
            ("dw2", ConvSpec::depthwise(channels, k)),
            ("pw2", ConvSpec::pointwise(channels, channels)),
        ],
        BlockVariant::Dilated => (1..=3)
            .map(|d| {
                let name = ["conv1", "conv2", "conv3"][d - 1];
                (name, ConvSpec::new(channels, channels, 3).with_dilation(d))
            })
            .collect(),
    }
}

/// Learnable layers of one block at `channels` width.
pub fn block_layers(prefix: &str, channels: usize, config: &NetworkConfig) -> Vec<LayerDecl> {
    let mut layers = vec![LayerDecl::norm(format!("{prefix}.ln1"), channels)];
    for (name, spec) in mixer_specs(channels, config) {
        layers.push(LayerDecl::conv(format!("{prefix}.mix.{name}"), spec));
    }
    layers.push(LayerDecl::norm(format!("{prefix}.ln2"), channels));
    layers.push(LayerDecl::conv(format!("{prefix}.fuse.w1"), ConvSpec::pointwise(channels, channels)));
    layers.push(LayerDecl::conv(format!("{prefix}.fuse.w2"), ConvSpec::pointwise(channels, channels)));
    layers.push(LayerDecl::conv(format!("{prefix}.fuse.dw_gate"), ConvSpec::depthwise(channels, 3)));
    layers.push(LayerDecl::conv(format!("{prefix}.fuse.dw_value"), ConvSpec::depthwise(channels, 3)));
    layers.push(LayerDecl::norm(format!("{prefix}.ln3"), channels));
    layers
}

pub(crate) fn apply_conv(
    g: &mut Graph,
    params: &BoundParams,
    name: &str,
    x: Var,
    spec: &ConvSpec,
) -> Result<Var> {
    let weight = params.get(&format!("{name}.weight"))?;
    let bias = if spec.has_bias {
        Some(params.get(&format!("{name}.bias"))?)
    } else {
        None
    };
    nn::conv2d(g, x, weight, bias, spec)
}

fn apply_norm(g: &mut Graph, params: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let gamma = params.get(&format!("{name}.gamma"))?;
    let beta = params.get(&format!("{name}.beta"))?;
    let channels = g.shape(gamma)[0];
    nn::layer_norm(g, x, Some((gamma, beta)), &LayerNormSpec::new(channels))
}

/// Runs one block (either variant, per `config.block_variant`).
pub fn block_forward(
    g: &mut Graph,
    f_prev: Var,
    params: &BoundParams,
    prefix: &str,
    config: &NetworkConfig,
) -> Result<Var> {
    let [_, channels, _, _] = g.value(f_prev).dims4()?;
    let expected = g.shape(params.get(&format!("{prefix}.ln1.gamma"))?)[0];
    if channels != expected {
        return Err(Error::shape("block input channels", &[channels], &[expected]));
    }

    let z0 = apply_norm(g, params, &format!("{prefix}.ln1"), f_prev)?;
    let mut z = z0;
    for (name, spec) in mixer_specs(channels, config) {
        let h = apply_conv(g, params, &format!("{prefix}.mix.{name}"), z, &spec)?;
        z = if config.shortcut_inner { g.add(z0, h)? } else { h };
    }
    let m = if config.shortcut_middle { g.add(f_prev, z)? } else { z };

    let t = apply_norm(g, params, &format!("{prefix}.ln2"), m)?;
    let pw = ConvSpec::pointwise(channels, channels);
    let dw = ConvSpec::depthwise(channels, 3);
    let gate = apply_conv(g, params, &format!("{prefix}.fuse.w1"), t, &pw)?;
    let gate = apply_conv(g, params, &format!("{prefix}.fuse.dw_gate"), gate, &dw)?;
    let gate = nn::gelu(g, gate);
    let value = apply_conv(g, params, &format!("{prefix}.fuse.w2"), t, &pw)?;
    let value = apply_conv(g, params, &format!("{prefix}.fuse.dw_value"), value, &dw)?;
    let fused = g.mul(gate, value)?;
    let fused = apply_norm(g, params, &format!("{prefix}.ln3"), fused)?;
    g.add(f_prev, fused)
}

/// LaKD block forward. Fails if `config` selects the dilated variant.
pub fn lakd_block_forward(
    g: &mut Graph,
    f_prev: Var,
    params: &BoundParams,
    prefix: &str,
    config: &NetworkConfig,
) -> Result<Var> {
    if config.block_variant != BlockVariant::Lakd {
        return Err(Error::Config("lakd_block_forward needs block_variant = lakd".into()));
    }
    block_forward(g, f_prev, params, prefix, config)
}

/// Dilated-mixer block forward. Fails if `config` selects the LaKD variant.
pub fn dilated_block_forward(
    g: &mut Graph,
    f_prev: Var,
    params: &BoundParams,
    prefix: &str,
    config: &NetworkConfig,
) -> Result<Var> {
    if config.block_variant != BlockVariant::Dilated {
        return Err(Error::Config("dilated_block_forward needs block_variant = dilated".into()));
    }
    block_forward(g, f_prev, params, prefix, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::lakdnet::params::ParamStore;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(variant: BlockVariant, k: usize) -> NetworkConfig {
        NetworkConfig {
            block_variant: variant,
            mixer_kernel: k,
            ..NetworkConfig::tiny(4, k)
        }
    }

    fn zero_convs(store: &mut ParamStore) {
        for (name, t) in store.iter_mut() {
            if name.ends_with(".weight") || name.ends_with(".bias") {
                t.data_mut().fill(0.0);
            }
        }
    }

    fn run(store: &ParamStore, x: &Tensor, config: &NetworkConfig) -> Tensor {
        let mut g = Graph::new();
        let params = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = block_forward(&mut g, xv, &params, "b", config).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zero_weights_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform([2, 4, 8, 8], -1.0, 1.0, &mut rng);
        for variant in [BlockVariant::Lakd, BlockVariant::Dilated] {
            let cfg = config(variant, 5);
            let mut store = ParamStore::init(&block_layers("b", 4, &cfg), 3);
            zero_convs(&mut store);
            assert_eq!(run(&store, &x, &cfg), x);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let cfg = config(BlockVariant::Lakd, 9);
        let store = ParamStore::init(&block_layers("b", 4, &cfg), 3);
        let x = Tensor::zeros([1, 4, 8, 8]);
        assert!(run(&store, &x, &cfg).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn preserves_shape_with_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform([1, 4, 8, 12], -1.0, 1.0, &mut rng);
        for variant in [BlockVariant::Lakd, BlockVariant::Dilated] {
            let cfg = config(variant, 9);
            let store = ParamStore::init(&block_layers("b", 4, &cfg), 5);
            let y = run(&store, &x, &cfg);
            assert_eq!(y.shape(), x.shape());
            assert!(y.is_finite());
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let cfg = config(BlockVariant::Lakd, 3);
        let store = ParamStore::init(&block_layers("b", 4, &cfg), 0);
        let mut g = Graph::new();
        let params = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([1, 8, 4, 4]));
        assert!(block_forward(&mut g, x, &params, "b", &cfg).is_err());
        let dil = config(BlockVariant::Dilated, 3);
        assert!(lakd_block_forward(&mut g, x, &params, "b", &dil).is_err());
        assert!(dilated_block_forward(&mut g, x, &params, "b", &cfg).is_err());
    }

    #[test]
    fn block_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = config(BlockVariant::Lakd, 3);
        let store = ParamStore::init(&block_layers("b", 4, &cfg), 11);
        let x = Tensor::uniform([1, 4, 8, 8], -2.0, 2.0, &mut rng);
        let err = grad_check(
            |g, v| {
                let params = store.bind(g, false);
                let y = block_forward(g, v, &params, "b", &cfg)?;
                let sq = g.mul(y, y)?;
                g.mean(sq)
            },
            &x,
            1e-2,
        )
        .unwrap();
        assert!(err < 1e-2, "{err}");
    }
}
