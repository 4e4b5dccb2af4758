//! Central-difference gradient oracle.
//!
//! Used throughout the test suites as the independent check on reverse-mode
//! gradients. The evaluation closure receives perturbed copies of the
//! parameters and must be deterministic.

use super::tensor::Tensor;
use super::AutodiffError;

/// Central finite-difference gradient of `f` with respect to every element
/// of every parameter tensor.
pub fn finite_diff_grad<F>(
    f: F,
    params: &[Tensor],
    step: f64,
) -> Result<Vec<Tensor>, AutodiffError>
where
    F: Fn(&[Tensor]) -> Result<f64, AutodiffError>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut grad = Tensor::zeros(p.shape().to_vec());
        for ei in 0..p.len() {
            let base = p.data()[ei];
            work[pi].data_mut()[ei] = base + step;
            let plus = f(&work)?;
            work[pi].data_mut()[ei] = base - step;
            let minus = f(&work)?;
            work[pi].data_mut()[ei] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(AutodiffError::NonFinite(format!(
                    "finite-difference probe at parameter {pi} element {ei}"
                )));
            }
            grad.data_mut()[ei] = (plus - minus) / (2.0 * step);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Relative-error comparison used by the gradient suites: `a` and `b` agree
/// when |a - b| <= tol * max(|a|, |b|), with an absolute floor for pairs
/// that are both essentially zero.
pub fn grads_close(a: &[Tensor], b: &[Tensor], rel_tol: f64, abs_floor: f64) -> bool {
    max_rel_err(a, b, abs_floor) <= rel_tol
}

/// Worst relative disagreement between two gradient sets.
pub fn max_rel_err(a: &[Tensor], b: &[Tensor], abs_floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient set size mismatch");
    let mut worst = 0.0f64;
    for (ta, tb) in a.iter().zip(b) {
        assert_eq!(ta.shape(), tb.shape(), "gradient shape mismatch");
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let scale = x.abs().max(y.abs());
            if scale <= abs_floor {
                continue;
            }
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_rounding() {
        let params = vec![Tensor::scalar(3.0)];
        let grads = finite_diff_grad(
            |p| Ok(p[0].scalar_value() * p[0].scalar_value()),
            &params,
            1e-5,
        )
        .unwrap();
        assert!((grads[0].scalar_value() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let params = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let grads = finite_diff_grad(|_| Ok(7.25), &params, 1e-5).unwrap();
        assert!(grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let params = vec![Tensor::scalar(0.0)];
        let res = finite_diff_grad(|p| Ok(p[0].scalar_value().ln()), &params, 1e-5);
        assert!(res.is_err());
    }
}
