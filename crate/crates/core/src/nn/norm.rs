use crate::autograd::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer normalization across channels, applied independently at every
/// spatial location of a `[B, C, H, W]` tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNormSpec {
    pub channels: usize,
    pub epsilon: f32,
    /// Whether a per-channel `gamma`/`beta` follows the normalization.
    pub affine: bool,
}

impl LayerNormSpec {
    pub const DEFAULT_EPSILON: f32 = 1e-6;

    pub fn new(channels: usize) -> Self {
        LayerNormSpec {
            channels,
            epsilon: Self::DEFAULT_EPSILON,
            affine: true,
        }
    }

    pub fn num_params(&self) -> usize {
        if self.affine {
            2 * self.channels
        } else {
            0
        }
    }
}

struct LayerNormFn {
    /// Normalized input before the affine step.
    xhat: Vec<f32>,
    /// `1 / sqrt(var + eps)` per location.
    rstd: Vec<f64>,
    affine: bool,
}

impl Function for LayerNormFn {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [b, c, h, w] = inputs[0].dims4().expect("4-d");
        let hw = h * w;
        let gamma = self.affine.then(|| inputs[1].data());
        let mut gx = vec![0.0f32; grad.len()];
        let mut ggamma = vec![0.0f64; c];
        let mut gbeta = vec![0.0f64; c];

        for bi in 0..b {
            for p in 0..hw {
                let loc = bi * hw + p;
                let idx = |ch: usize| (bi * c + ch) * hw + p;
                let mut mean_d = 0.0f64;
                let mut mean_dx = 0.0f64;
                for ch in 0..c {
                    let gy = f64::from(grad[idx(ch)]);
                    let xh = f64::from(self.xhat[idx(ch)]);
                    let d = gy * gamma.map_or(1.0, |g| f64::from(g[ch]));
                    mean_d += d;
                    mean_dx += d * xh;
                    ggamma[ch] += gy * xh;
                    gbeta[ch] += gy;
                }
                mean_d /= c as f64;
                mean_dx /= c as f64;
                let rstd = self.rstd[loc];
                for ch in 0..c {
                    let i = idx(ch);
                    let d = f64::from(grad[i]) * gamma.map_or(1.0, |g| f64::from(g[ch]));
                    let xh = f64::from(self.xhat[i]);
                    gx[i] = (rstd * (d - mean_d - xh * mean_dx)) as f32;
                }
            }
        }

        let mut out = vec![inputs[0].requires_grad().then_some(gx)];
        if self.affine {
            let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
            out.push(inputs[1].requires_grad().then(|| to32(ggamma)));
            out.push(inputs[2].requires_grad().then(|| to32(gbeta)));
        }
        out
    }
}

/// Records a channel layer norm. `affine` must be `Some((gamma, beta))`
/// exactly when `spec.affine` is set.
pub fn layer_norm(
    graph: &mut Graph,
    x: Var,
    affine: Option<(Var, Var)>,
    spec: &LayerNormSpec,
) -> Result<Var> {
    let input = graph.value(x);
    let [b, c, h, w] = input.dims4()?;
    if c != spec.channels {
        return Err(Error::shape("layer_norm channels", &[c], &[spec.channels]));
    }
    let params = match (spec.affine, affine) {
        (true, Some((gamma, beta))) => {
            for p in [gamma, beta] {
                if graph.shape(p) != [c] {
                    return Err(Error::shape("layer_norm affine", graph.shape(p), &[c]));
                }
            }
            Some((graph.value(gamma).data(), graph.value(beta).data()))
        }
        (false, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "layer_norm affine parameters do not match the channel count".into(),
            ))
        }
    };

    let hw = h * w;
    let data = input.data();
    let mut xhat = vec![0.0f32; data.len()];
    let mut out = vec![0.0f32; data.len()];
    let mut rstd = vec![0.0f64; b * hw];
    for bi in 0..b {
        for p in 0..hw {
            let idx = |ch: usize| (bi * c + ch) * hw + p;
            let mean = (0..c).map(|ch| f64::from(data[idx(ch)])).sum::<f64>() / c as f64;
            let var = (0..c)
                .map(|ch| (f64::from(data[idx(ch)]) - mean).powi(2))
                .sum::<f64>()
                / c as f64;
            let r = 1.0 / (var + f64::from(spec.epsilon)).sqrt();
            rstd[bi * hw + p] = r;
            for ch in 0..c {
                let i = idx(ch);
                let xh = (f64::from(data[i]) - mean) * r;
                xhat[i] = xh as f32;
                out[i] = match params {
                    Some((gamma, beta)) => (xh * f64::from(gamma[ch]) + f64::from(beta[ch])) as f32,
                    None => xh as f32,
                };
            }
        }
    }

    let value = Tensor::new([b, c, h, w], out)?;
    let op = LayerNormFn {
        xhat,
        rstd,
        affine: spec.affine,
    };
    let inputs: Vec<Var> = match affine {
        Some((gamma, beta)) => vec![x, gamma, beta],
        None => vec![x],
    };
    Ok(graph.record(value, &inputs, op))
}
