use serde::{Deserialize, Serialize};

use super::gnd::GndParams;
use crate::error::{Error, Result};

/// The ERFM score `sigma / (sqrt(2) beta) * ln(max + 1)` with its factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfmScore {
    pub value: f64,
    pub sigma: f64,
    pub beta: f64,
    /// `ln(max + 1)` of the raw ERF response.
    pub log_max: f64,
}

impl ErfmScore {
    /// Recomputes the score from the recorded factors.
    pub fn recompute(&self) -> f64 {
        self.sigma / (std::f64::consts::SQRT_2 * self.beta) * self.log_max
    }
}

pub fn erfm(params: &GndParams, max_x: f64) -> Result<ErfmScore> {
    params.validate()?;
    if !(max_x >= 0.0) {
        return Err(Error::InvalidArgument(format!("ERF maximum must be >= 0, got {max_x}")));
    }
    let log_max = max_x.ln_1p();
    let mut score = ErfmScore { value: 0.0, sigma: params.sigma, beta: params.beta, log_max };
    score.value = score.recompute();
    Ok(score)
}
