use super::Tensor;
use crate::error::{Error, Result};

/// Per-parameter comparison of analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - numeric_i| / max(‖analytic‖∞, ‖numeric‖∞, 1e-8)`
    /// for each parameter, in input order.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Central-difference gradient check of a scalar function of `params`.
///
/// `f` receives the parameter list (perturbed copies during the numeric
/// sweep) and must return a one-element tensor. Each parameter is rebuilt as
/// a fresh trainable leaf, so the caller's tensors are left untouched.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {step}")));
    }
    let leaves: Vec<Tensor> = params
        .iter()
        .map(|p| Tensor::param(p.to_vec(), p.shape()))
        .collect::<Result<_>>()?;
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let v = f(ps)?.item()?;
        if v.is_nan() {
            return Err(Error::Numeric("finite-difference objective returned NaN".into()));
        }
        Ok(v)
    };

    let loss = f(&leaves)?;
    if loss.item()?.is_nan() {
        return Err(Error::Numeric("finite-difference objective returned NaN".into()));
    }
    loss.backward()?;

    let mut relative_errors = Vec::with_capacity(leaves.len());
    for pi in 0..leaves.len() {
        let analytic = leaves[pi].grad().unwrap_or_else(|| vec![0.0; leaves[pi].numel()]);
        let base = leaves[pi].to_vec();
        let mut numeric = vec![0.0; base.len()];
        let mut probe: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += step;
            probe[pi] = Tensor::new(plus, leaves[pi].shape())?;
            let fp = eval(&probe)?;
            let mut minus = base.clone();
            minus[i] -= step;
            probe[pi] = Tensor::new(minus, leaves[pi].shape())?;
            let fm = eval(&probe)?;
            numeric[i] = (fp - fm) / (2.0 * step);
        }
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = inf(&analytic).max(inf(&numeric)).max(1e-8);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        relative_errors.push(worst / scale);
    }
    Ok(GradCheckReport { relative_errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_up_to_rounding() {
        // the analytic side is exactly ones; only the difference quotient rounds
        let x = Tensor::new(vec![0.3, -1.2, 4.0], &[3]).unwrap();
        let r = finite_difference_check(|p| Ok(p[0].sum()), &[x], 1e-5).unwrap();
        assert!(r.max_error() < 1e-10, "{r:?}");
    }

    #[test]
    fn quadratic_form_matches_2ax() {
        // f(x) = xᵀAx with symmetric A; gradient 2Ax
        let a = Tensor::new(vec![2.0, 0.5, 0.5, 1.0], &[2, 2]).unwrap();
        let x = Tensor::new(vec![0.1, -0.2], &[2, 1]).unwrap();
        let f = |p: &[Tensor]| -> Result<Tensor> {
            let ax = a.matmul(&p[0])?;
            Ok(p[0].mul(&ax)?.sum())
        };
        let r = finite_difference_check(f, &[x.clone()], 1e-5).unwrap();
        assert!(r.max_error() < 1e-8, "{r:?}");

        let leaf = Tensor::param(x.to_vec(), x.shape()).unwrap();
        f(&[leaf.clone()]).unwrap().backward().unwrap();
        let g = leaf.grad().unwrap();
        assert!((g[0] - 2.0 * (2.0 * 0.1 + 0.5 * -0.2)).abs() < 1e-15);
        assert!((g[1] - 2.0 * (0.5 * 0.1 + 1.0 * -0.2)).abs() < 1e-15);
    }

    #[test]
    fn nan_objective_is_numeric_error() {
        let x = Tensor::new(vec![-1.0], &[1]).unwrap();
        let r = finite_difference_check(|p| Ok(p[0].sqrt().sum()), &[x], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
