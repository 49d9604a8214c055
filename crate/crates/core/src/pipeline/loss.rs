use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("charbonnier eps must be positive, got {eps}")))
    }
}

/// Records `mean(sqrt((pred - target)^2 + eps^2))`.
pub fn charbonnier_loss(g: &mut Graph, pred: Var, target: Var, eps: f64) -> Result<Var> {
    check_eps(eps)?;
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape("charbonnier_loss", g.shape(pred), g.shape(target)));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let shifted = g.affine(sq, 1.0, (eps * eps) as f32);
    let root = g.sqrt(shifted);
    g.mean(root)
}

/// Graph-free evaluation in `f64`.
pub fn charbonnier_value(pred: &Tensor, target: &Tensor, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if pred.shape() != target.shape() {
        return Err(Error::shape("charbonnier_value", pred.shape(), target.shape()));
    }
    if pred.numel() == 0 {
        return Err(Error::Empty { op: "charbonnier_value" });
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            (d * d + eps * eps).sqrt()
        })
        .sum();
    Ok(total / pred.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use proptest::prelude::*;

    fn loss_of(pred: &[f32], target: &[f32], eps: f64) -> f64 {
        let mut g = Graph::new();
        let p = g.constant(Tensor::new([pred.len()], pred.to_vec()).unwrap());
        let t = g.constant(Tensor::new([target.len()], target.to_vec()).unwrap());
        let l = charbonnier_loss(&mut g, p, t, eps).unwrap();
        g.scalar_f64(l).unwrap()
    }

    #[test]
    fn reference_values() {
        assert!((loss_of(&[0.3, 0.7], &[0.3, 0.7], 1e-3) - 1e-3).abs() < 1e-9);
        assert!((loss_of(&[1.0, 2.0], &[0.0, 1.0], 1e-3) - (1.0f64 + 1e-6).sqrt()).abs() < 1e-7);
        let mixed = (1e-3 + 3.16228e-3) / 2.0;
        assert!((loss_of(&[0.5, 0.503], &[0.5, 0.5], 1e-3) - mixed).abs() < 1e-7);
        let exact = charbonnier_value(
            &Tensor::new([2], vec![0.0, 3e-3]).unwrap(),
            &Tensor::zeros([2]),
            1e-3,
        )
        .unwrap();
        let d = f64::from(3e-3f32);
        assert!((exact - (1e-3 + (d * d + 1e-6).sqrt()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_bad_eps() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2]));
        let b = g.constant(Tensor::zeros([3]));
        assert!(charbonnier_loss(&mut g, a, b, 1e-3).is_err());
        assert!(charbonnier_loss(&mut g, a, a, 0.0).is_err());
        assert!(charbonnier_value(&Tensor::zeros([2]), &Tensor::zeros([2]), -1.0).is_err());
    }

    #[test]
    fn gradient_is_finite_at_zero_residual() {
        let target = Tensor::new([3], vec![0.1, -0.2, 0.4]).unwrap();
        let t2 = target.clone();
        let err = grad_check(
            |g, v| {
                let t = g.constant(t2.clone());
                charbonnier_loss(g, v, t, 1e-1)
            },
            &Tensor::new([3], vec![0.1, 0.3, -0.5]).unwrap(),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3);
        let mut g = Graph::new();
        let p = g.param(target.clone());
        let t = g.constant(target);
        let l = charbonnier_loss(&mut g, p, t, 1e-3).unwrap();
        g.backward(l, 1.0).unwrap();
        assert!(g.grad(p).unwrap().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn bounded_below_by_eps(v in prop::collection::vec(-2.0f32..2.0, 1..20), eps in 1e-4f64..1e-1) {
            let pred = Tensor::new([v.len()], v.clone()).unwrap();
            let zero = Tensor::zeros([v.len()]);
            let l = charbonnier_value(&pred, &zero, eps).unwrap();
            prop_assert!(l >= eps);
            let same = charbonnier_value(&pred, &pred, eps).unwrap();
            prop_assert!((same - eps).abs() <= 1e-15);
            if v.iter().any(|x| *x != 0.0) {
                prop_assert!(l > eps);
            }
        }
    }
}
