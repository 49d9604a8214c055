use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", pred.shape(), target.shape()));
    }
    if pred.numel() == 0 {
        return Err(Error::Empty { op: "mse" });
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// `10 log10(peak^2 / MSE)` in dB; identical inputs give `+inf`.
pub fn psnr(pred: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(pred, target)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}
