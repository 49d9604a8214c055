//! Levenberg-Marquardt fitting of the generalized-normal curve.
//!
//! The solver works on `(ln sigma, ln beta, mu, c1, c2)` so that scale and
//! shape stay positive. Derivatives are analytic except the one with respect
//! to `ln beta`, which goes through `Gamma(1/beta)` and is taken by central
//! differences. Damping uses Marquardt's diagonal scaling.

use nalgebra::{SMatrix, SVector};

use super::gnd::GndParams;
use crate::error::{Error, Result};

type Vec5 = SVector<f64, 5>;
type Mat5 = SMatrix<f64, 5, 5>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the residual sum of squares by
    /// less than this fraction.
    pub rel_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            max_iterations: 200,
            rel_tolerance: 1e-12,
        }
    }
}

/// Result of a successful fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GndFit {
    /// Fitted parameters with `r_squared` filled in.
    pub params: GndParams,
    pub iterations: usize,
    pub ss_res: f64,
}

const LN_BETA_STEP: f64 = 1e-6;
const MAX_DAMPING: f64 = 1e16;

fn to_params(theta: &Vec5) -> GndParams {
    GndParams::new(theta[0].exp(), theta[1].exp(), theta[2], theta[3], theta[4])
}

fn sum_squares(theta: &Vec5, xs: &[f64], ys: &[f64]) -> f64 {
    let p = to_params(theta);
    xs.iter().zip(ys).map(|(&x, &y)| (p.eval(x) - y).powi(2)).sum()
}

/// Normal equations `J^T J` and `J^T r` at `theta`.
fn normal_equations(theta: &Vec5, xs: &[f64], ys: &[f64]) -> (Mat5, Vec5) {
    let p = to_params(theta);
    let norm = p.norm();
    let beta_hi = to_params(&(theta + Vec5::new(0.0, LN_BETA_STEP, 0.0, 0.0, 0.0)));
    let beta_lo = to_params(&(theta - Vec5::new(0.0, LN_BETA_STEP, 0.0, 0.0, 0.0)));
    let mut jtj = Mat5::zeros();
    let mut jtr = Vec5::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let d = (x - p.mu) / p.sigma;
        let u = d.abs();
        let ub = u.powf(p.beta);
        let e = (-ub).exp();
        let peak = p.c1 * norm * e;
        let r = peak + p.c2 - y;
        // subgradient zero at the center for beta <= 1
        let dmu = if u > 0.0 {
            peak * p.beta * ub / u * d.signum() / p.sigma
        } else {
            0.0
        };
        let row = Vec5::new(
            peak * (p.beta * ub - 1.0),
            (beta_hi.eval(x) - beta_lo.eval(x)) / (2.0 * LN_BETA_STEP),
            dmu,
            norm * e,
            1.0,
        );
        jtj += row * row.transpose();
        jtr += row * r;
    }
    (jtj, jtr)
}

/// Half width at half maximum above `base`, measured outward from `peak`.
fn half_width(xs: &[f64], ys: &[f64], peak: usize, base: f64) -> Option<f64> {
    let half = base + 0.5 * (ys[peak] - base);
    let crossing = |range: &mut dyn Iterator<Item = usize>| {
        let mut prev = peak;
        for i in range {
            if ys[i] <= half {
                let t = (ys[prev] - half) / (ys[prev] - ys[i]);
                let x = xs[prev] + t * (xs[i] - xs[prev]);
                return Some((x - xs[peak]).abs());
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..peak).rev());
    let right = crossing(&mut (peak + 1..xs.len()));
    match (left, right) {
        (Some(l), Some(r)) => Some(0.5 * (l + r)),
        (l, r) => l.or(r),
    }
}

/// Starting point: center at the maximum, offset at the minimum, shape 1.5,
/// scale at the half-width and amplitude matching the observed peak.
pub fn initial_guess(xs: &[f64], ys: &[f64]) -> GndParams {
    let peak = (0..ys.len()).fold(0, |best, i| if ys[i] > ys[best] { i } else { best });
    let c2 = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let span = xs[xs.len() - 1] - xs[0];
    let sigma = half_width(xs, ys, peak, c2)
        .filter(|w| *w > 0.0)
        .unwrap_or(span.abs() / 4.0);
    let mut p = GndParams::new(sigma, 1.5, xs[peak], 0.0, c2);
    p.c1 = (ys[peak] - c2) / p.norm();
    p
}

pub fn r_squared(params: &GndParams, xs: &[f64], ys: &[f64]) -> f64 {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(&x, &y)| (params.eval(x) - y).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn check_samples(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 16 {
        return Err(Error::InvalidArgument(format!(
            "need at least 16 samples to fit, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::InvalidArgument("samples are constant".into()));
    }
    Ok(())
}

/// Least-squares fit of the GND curve to `(xs, ys)`.
///
/// Fails with [`Error::FitFailed`], carrying the best parameters found, when
/// the iteration budget runs out before convergence.
pub fn fit_gnd_samples(xs: &[f64], ys: &[f64], options: &LmOptions) -> Result<GndFit> {
    check_samples(xs, ys)?;
    let init = initial_guess(xs, ys);
    let mut theta = Vec5::new(init.sigma.ln(), init.beta.ln(), init.mu, init.c1, init.c2);
    let mut ss = sum_squares(&theta, xs, ys);
    let mut damping = options.initial_damping;
    let (mut jtj, mut jtr) = normal_equations(&theta, xs, ys);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let mut lhs = jtj;
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        for i in 0..5 {
            lhs[(i, i)] += damping * jtj[(i, i)].max(1e-12 * scale);
        }
        let step = lhs
            .cholesky()
            .map(|c| c.solve(&(-jtr)))
            .or_else(|| lhs.lu().solve(&(-jtr)));
        let candidate = step.map(|s| theta + s);
        let trial = candidate.map(|c| (c, sum_squares(&c, xs, ys)));
        match trial {
            Some((c, trial_ss)) if trial_ss.is_finite() && trial_ss < ss => {
                let improvement = (ss - trial_ss) / ss;
                theta = c;
                ss = trial_ss;
                damping = (damping / options.damping_down).max(1e-15);
                if improvement < options.rel_tolerance || ss == 0.0 {
                    converged = true;
                    break;
                }
                (jtj, jtr) = normal_equations(&theta, xs, ys);
            }
            _ => {
                damping *= options.damping_up;
                if damping > MAX_DAMPING {
                    // no descent direction left at machine precision
                    converged = true;
                    break;
                }
            }
        }
    }

    let mut params = to_params(&theta);
    params.r_squared = Some(r_squared(&params, xs, ys));
    if !converged {
        return Err(Error::FitFailed {
            best: Box::new(params),
            iterations,
        });
    }
    Ok(GndFit { params, iterations, ss_res: ss })
}
