//! Effective receptive field scoring: generalized-normal curve fitting of
//! ERF scanlines, the ERFM score and correlation statistics.

mod fit;
mod gamma;
mod gnd;
mod report;
mod score;
mod stats;

pub use fit::{fit_gnd_samples, initial_guess, r_squared, GndFit, LmOptions};
pub use gamma::gamma_fn;
pub use gnd::{gnd_pdf, GndParams};
pub use report::{fit_csv, FitReport};
pub use score::{erfm, ErfmScore};
pub use stats::{pearson_r, CorrelationResult};

use crate::erf::ErfProfile;
use crate::error::Result;

/// Fits a scanline profile with the default solver settings.
pub fn fit_gnd(profile: &ErfProfile) -> Result<GndParams> {
    fit_gnd_samples(&profile.xs, &profile.ys, &LmOptions::default()).map(|fit| fit.params)
}
