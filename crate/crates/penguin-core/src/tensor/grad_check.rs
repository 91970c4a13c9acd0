//! Central finite-difference gradients, used as the independent oracle
//! against reverse-mode results.

use alloc::vec::Vec;

use super::Tensor;
use crate::error::{invalid_err, nonfinite_err, Result};

/// Estimate `df/dθ` for every entry of every tensor in `params` via central
/// differences: `(f(θ+h e) − f(θ−h e)) / 2h`.
///
/// `f` is evaluated on the perturbed parameter set and must be deterministic;
/// parameters are restored to their original values before returning. The
/// result aligns with `params` entry for entry.
pub fn finite_diff_gradient<F>(params: &mut [Tensor], mut f: F, step: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(invalid_err!("finite difference step must be > 0, got {step}"));
    }
    let mut grads: Vec<Tensor> = params
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let original = params[pi].data()[ei];

            params[pi].data_mut()[ei] = original + step;
            let plus = f(params)?;
            params[pi].data_mut()[ei] = original - step;
            let minus = f(params)?;
            params[pi].data_mut()[ei] = original;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(nonfinite_err!(
                    "finite_diff_gradient evaluation at param {pi} entry {ei}"
                ));
            }
            grads[pi].data_mut()[ei] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Relative disagreement between two gradient values, floored so that noise
/// around zero gradients does not register as error.
pub fn gradient_rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_slope_at_three() {
        let mut params = vec![Tensor::scalar(3.0)];
        let g = finite_diff_gradient(&mut params, |p| Ok(p[0].item() * p[0].item()), 1e-5).unwrap();
        assert!((g[0].item() - 6.0).abs() < 1e-8);
        assert_eq!(params[0].item(), 3.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut params = vec![Tensor::new(1, 4, vec![0.1, -0.4, 2.0, 7.0]).unwrap()];
        let g = finite_diff_gradient(&mut params, |_| Ok(42.0), 1e-5).unwrap();
        assert!(g[0].data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut params = vec![Tensor::scalar(1.0)];
        assert!(finite_diff_gradient(&mut params, |_| Ok(0.0), 0.0).is_err());
    }
}
