use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::gnd::GndParams;
use super::score::erfm;
use crate::error::{Error, Result};

/// One row of fit results: fitted curve, goodness of fit and ERFM score of
/// a probed layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub sigma: f64,
    pub beta: f64,
    pub mu: f64,
    pub c1: f64,
    pub c2: f64,
    pub r_squared: f64,
    pub erfm: f64,
    pub max_value: f64,
    pub layer: String,
}

impl FitReport {
    pub fn new(params: &GndParams, max_value: f64, layer: impl Into<String>) -> Result<Self> {
        let score = erfm(params, max_value)?;
        Ok(FitReport {
            sigma: params.sigma,
            beta: params.beta,
            mu: params.mu,
            c1: params.c1,
            c2: params.c2,
            r_squared: params
                .r_squared
                .ok_or_else(|| Error::InvalidArgument("parameters carry no R^2".into()))?,
            erfm: score.value,
            max_value,
            layer: layer.into(),
        })
    }

    pub fn params(&self) -> GndParams {
        GndParams {
            r_squared: Some(self.r_squared),
            ..GndParams::new(self.sigma, self.beta, self.mu, self.c1, self.c2)
        }
    }
}

/// `x,y,fit` rows for plotting a profile against its fitted curve.
pub fn fit_csv(params: &GndParams, xs: &[f64], ys: &[f64]) -> String {
    let mut out = String::from("x,y,fit\n");
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = writeln!(out, "{x},{y},{}", params.eval(x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_fields() {
        let mut p = GndParams::new(1.9, 1.1, 0.5, 0.1, 2e-4);
        p.r_squared = Some(0.99);
        let report = FitReport::new(&p, 10.0, "bt_neck").unwrap();
        let v = serde_json::to_value(&report).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["beta", "c1", "c2", "erfm", "layer", "max_value", "mu", "r_squared", "sigma"]
        );
        assert_eq!(report.params(), p);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = GndParams::new(1.0, 2.0, 0.0, 1.0, 0.0);
        let csv = fit_csv(&p, &[0.0, 1.0], &[0.5, 0.2]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,fit");
        assert_eq!(lines.len(), 3);
    }
}
