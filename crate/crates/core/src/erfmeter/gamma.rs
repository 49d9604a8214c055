use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Lanczos approximation (g = 7, nine terms), reflected below 1/2.
/// Assumes `z` is not a non-positive integer.
pub(crate) fn gamma_unchecked(z: f64) -> f64 {
    use std::f64::consts::PI;
    if z < 0.5 {
        return PI / ((PI * z).sin() * gamma_unchecked(1.0 - z));
    }
    let z = z - 1.0;
    let mut sum = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * sum
}

/// The gamma function for positive arguments.
pub fn gamma_fn(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma needs a positive finite argument, got {z}")));
    }
    Ok(gamma_unchecked(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((gamma_fn(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((gamma_fn(0.5).unwrap() - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gamma_fn(5.0).unwrap() - 24.0).abs() < 1e-10);
        assert!((gamma_fn(0.5).unwrap() - 1.772_453_850_9).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(gamma_fn(0.0).is_err());
        assert!(gamma_fn(-1.5).is_err());
        assert!(gamma_fn(f64::NAN).is_err());
    }

    #[test]
    fn factorials_and_recurrence() {
        let mut fact = 1.0f64;
        for n in 1..=30 {
            let g = gamma_fn(n as f64).unwrap();
            assert!((g - fact).abs() / fact < 1e-10, "n = {n}");
            fact *= n as f64;
        }
        for i in 1..300 {
            let z = i as f64 * 0.1;
            let lhs = gamma_fn(z + 1.0).unwrap();
            let rhs = z * gamma_fn(z).unwrap();
            assert!((lhs - rhs).abs() / lhs < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn agrees_with_statrs() {
        for i in 1..=3000 {
            let z = i as f64 * 0.01;
            let ours = gamma_fn(z).unwrap();
            let reference = statrs::function::gamma::gamma(z);
            assert!((ours - reference).abs() / reference < 1e-10, "z = {z}");
        }
    }
}
