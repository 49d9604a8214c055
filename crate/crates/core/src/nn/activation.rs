use crate::autograd::{Function, Graph, Var};
use crate::tensor::Tensor;

/// Exact GELU, `x * Phi(x)` with `Phi` the standard normal CDF.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

struct GeluFn;

impl Function for GeluFn {
    fn name(&self) -> &'static str {
        "gelu"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let g = inputs[0]
            .data()
            .iter()
            .zip(grad)
            .map(|(&x, &g)| (f64::from(g) * gelu_derivative(f64::from(x))) as f32)
            .collect();
        vec![Some(g)]
    }
}

pub fn gelu(graph: &mut Graph, x: Var) -> Var {
    let t = graph.value(x);
    let data = t.data().iter().map(|&v| gelu_scalar(f64::from(v)) as f32).collect();
    let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
    graph.record(value, &[x], GeluFn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Maclaurin series of erf; converges quickly for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..80 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn reference_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        let oracle = 0.5 * (1.0 + erf_series(1.0 / std::f64::consts::SQRT_2));
        assert!((gelu_scalar(1.0) - oracle).abs() < 1e-12);
        assert!((gelu_scalar(1.0) - 0.841345).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-20);
    }

    #[test]
    fn matches_series_on_grid() {
        for i in -30..=30 {
            let x = f64::from(i) / 10.0;
            let oracle = 0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
            assert!((gelu_scalar(x) - oracle).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform([64], -2.0, 2.0, &mut rng);
        let err = grad_check(
            |g, v| {
                let y = gelu(g, v);
                g.mean(y)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }
}
