use serde::{Deserialize, Serialize};

use super::gamma::{gamma_fn, gamma_unchecked};
use crate::error::{Error, Result};

/// Parameters of the symmetric generalized-normal curve
/// `f(x) = c1 * beta / (2 sigma Gamma(1/beta)) * exp(-|(x - mu)/sigma|^beta) + c2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GndParams {
    pub sigma: f64,
    pub beta: f64,
    pub mu: f64,
    pub c1: f64,
    pub c2: f64,
    /// Coefficient of determination of the fit that produced these
    /// parameters, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
}

impl GndParams {
    pub fn new(sigma: f64, beta: f64, mu: f64, c1: f64, c2: f64) -> Self {
        GndParams { sigma, beta, mu, c1, c2, r_squared: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "GND needs sigma > 0 and beta > 0, got sigma = {}, beta = {}",
                self.sigma, self.beta
            )));
        }
        let fields = [self.sigma, self.beta, self.mu, self.c1, self.c2];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("GND parameters must be finite".into()));
        }
        Ok(())
    }

    /// Density scale `beta / (2 sigma Gamma(1/beta))`.
    pub(crate) fn norm(&self) -> f64 {
        self.beta / (2.0 * self.sigma * gamma_unchecked(1.0 / self.beta))
    }

    /// Evaluates the curve without validating the parameters.
    pub(crate) fn eval(&self, x: f64) -> f64 {
        let u = ((x - self.mu) / self.sigma).abs();
        self.c1 * self.norm() * (-u.powf(self.beta)).exp() + self.c2
    }
}

pub fn gnd_pdf(params: &GndParams, x: f64) -> Result<f64> {
    params.validate()?;
    gamma_fn(1.0 / params.beta)?;
    Ok(params.eval(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn laplace_and_gaussian_peaks() {
        let laplace = GndParams::new(1.0, 1.0, 0.0, 1.0, 0.0);
        assert!((gnd_pdf(&laplace, 0.0).unwrap() - 0.5).abs() < 1e-12);
        let gauss = GndParams::new(1.0, 2.0, 0.0, 1.0, 0.0);
        assert!((gnd_pdf(&gauss, 0.0).unwrap() - 1.0 / PI.sqrt()).abs() < 1e-12);
        assert!((gnd_pdf(&gauss, 0.0).unwrap() - 0.564_189_6).abs() < 1e-7);
    }

    #[test]
    fn peak_with_offset() {
        let p = GndParams::new(2.0, 1.5, 0.5, 0.12, 1e-4);
        let expected = 0.12 * 1.5 / (4.0 * statrs::function::gamma::gamma(2.0 / 3.0)) + 1e-4;
        assert!((gnd_pdf(&p, 0.5).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn beta_two_is_gaussian() {
        // exp(-(x/s)^2) is a normal density with standard deviation s / sqrt(2)
        let (sigma, c1, c2, mu) = (1.7, 0.3, -0.01, 0.4);
        let p = GndParams::new(sigma, 2.0, mu, c1, c2);
        let sd = sigma / SQRT_2;
        for i in 0..100 {
            let x = -6.0 + 0.12 * i as f64;
            let normal = (-(x - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt());
            assert!((gnd_pdf(&p, x).unwrap() - (c1 * normal + c2)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_about_center() {
        let p = GndParams::new(2.3, 0.8, -1.25, 0.5, 0.01);
        for i in 0..50 {
            // dyadic offsets so that (mu ± d) - mu is exact
            let d = 0.375 * i as f64;
            assert_eq!(gnd_pdf(&p, p.mu + d).unwrap(), gnd_pdf(&p, p.mu - d).unwrap());
        }
    }

    #[test]
    fn rejects_non_positive_shape() {
        assert!(gnd_pdf(&GndParams::new(0.0, 1.0, 0.0, 1.0, 0.0), 0.0).is_err());
        assert!(gnd_pdf(&GndParams::new(1.0, -1.0, 0.0, 1.0, 0.0), 0.0).is_err());
    }
}
