//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lakdnet::{Checkpoint, ParamStore};
use crate::tensor::Tensor;

pub const ADAM_EPSILON: f64 = 1e-8;

/// `lr_min + (lr_max - lr_min) (1 + cos(pi t / total)) / 2`, held at
/// `lr_min` once `t >= total`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if t >= total {
        return lr_min;
    }
    let phase = PI * t as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, weight_decay: 1e-4 }
    }
}

/// One AdamW update of a flat buffer at step `t >= 1`:
/// `theta -= lr * (wd * theta + m_hat / (sqrt(v_hat) + 1e-8))`.
pub fn adamw_update(
    theta: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    config: &AdamWConfig,
) {
    let AdamWConfig { beta1, beta2, weight_decay } = *config;
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for i in 0..theta.len() {
        let g = f64::from(grad[i]);
        let mi = beta1 * f64::from(m[i]) + (1.0 - beta1) * g;
        let vi = beta2 * f64::from(v[i]) + (1.0 - beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let th = f64::from(theta[i]);
        let step = (mi / c1) / ((vi / c2).sqrt() + ADAM_EPSILON);
        theta[i] = (th - lr * (weight_decay * th + step)) as f32;
    }
}

/// Optimizer state for a [`ParamStore`], keyed by parameter position.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0f32; t.numel()]).collect();
        AdamW { config, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on each parameter.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        for (i, (_, tensor)) in params.iter_mut().enumerate() {
            let grad = tensor.grad().map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tensor.numel()]);
            adamw_update(tensor.data_mut(), &grad, &mut self.m[i], &mut self.v[i], self.step, lr, &self.config);
        }
        Ok(())
    }

    /// Appends `opt.m.<name>`, `opt.v.<name>` and `opt.step` entries.
    pub fn save(&self, params: &ParamStore, ckpt: &mut Checkpoint) -> Result<()> {
        for (i, (name, t)) in params.iter().enumerate() {
            ckpt.push(format!("opt.m.{name}"), &Tensor::new(t.shape(), self.m[i].clone())?);
            ckpt.push(format!("opt.v.{name}"), &Tensor::new(t.shape(), self.v[i].clone())?);
        }
        // split so steps above 2^24 survive the f32 payload
        let hi = (self.step >> 24) as f32;
        let lo = (self.step & 0xff_ffff) as f32;
        ckpt.push("opt.step", &Tensor::new([2], vec![hi, lo])?);
        Ok(())
    }

    pub fn load(params: &ParamStore, ckpt: &Checkpoint, config: AdamWConfig) -> Result<Self> {
        let mut state = AdamW::new(params, config);
        let fetch = |key: String, like: &Tensor| -> Result<Vec<f32>> {
            let t = ckpt.get(&key).ok_or_else(|| Error::UnknownParam(key.clone()))?;
            if t.shape() != like.shape() {
                return Err(Error::shape("optimizer state", t.shape(), like.shape()));
            }
            Ok(t.data().to_vec())
        };
        for (i, (name, t)) in params.iter().enumerate() {
            state.m[i] = fetch(format!("opt.m.{name}"), t)?;
            state.v[i] = fetch(format!("opt.v.{name}"), t)?;
        }
        let step = ckpt.get("opt.step").ok_or_else(|| Error::UnknownParam("opt.step".into()))?;
        match step.data() {
            &[hi, lo] => state.step = ((hi as u64) << 24) | lo as u64,
            _ => return Err(Error::invalid_shape(step.shape(), "opt.step must hold two values")),
        }
        Ok(state)
    }
}
