//! Central finite differences, the oracle for every backward pass.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_EPS: f64 = 1e-4;

/// Absolute floor in the relative-error denominator; entries whose gradient
/// magnitude is below it are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Gradient of `f` at `x` by `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims().to_vec());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("f({i} ± eps) = ({plus}, {minus})")));
        }
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Finite-difference gradient over a flat parameter vector, for callers that
/// pack several tensors together.
pub fn finite_diff_flat<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let t = Tensor::vector(x.to_vec());
    Ok(finite_diff_grad(f, &t, eps)?.into_data())
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, REL_ERR_FLOOR)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}
