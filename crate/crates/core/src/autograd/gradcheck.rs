use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares the analytic gradient of a scalar function against central
/// differences, coordinate by coordinate.
///
/// The function value is read through [`Graph::scalar_f64`], so a final
/// reduction contributes no `f32` rounding.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`. The
/// numeric step uses the actually representable perturbation `x+h - (x-h)`
/// rather than the nominal `2 * eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f32) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps {eps} outside [1e-4, 1e-2]"
        )));
    }

    let mut graph = Graph::new();
    let input = graph.param(x.clone());
    let root = f(&mut graph, input)?;
    graph.backward(root, 1.0)?;
    let analytic = graph
        .grad(input)
        .map(<[f32]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let r = f(&mut g, v)?;
        g.scalar_f64(r)
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[i] += eps;
        minus.data_mut()[i] -= eps;
        let step = f64::from(plus.data()[i]) - f64::from(minus.data()[i]);
        let numeric = (eval(plus)? - eval(minus)?) / step;
        let err = (f64::from(a) - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
