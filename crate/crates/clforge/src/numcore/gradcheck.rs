//! Central finite differences: the independent gradient oracle.

use crate::error::{Error, Result};

/// Central-difference gradient estimate of a scalar function.
///
/// The closure must be deterministic; any non-finite evaluation is an error.
pub fn finite_difference<F>(mut f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(Error::Numeric("finite_difference requires eps > 0".into()));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let plus = f(&probe);
        probe[i] = theta[i] - eps;
        let minus = f(&probe);
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_difference: non-finite function value at coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative-error comparison used by all gradient checks: passes when the
/// absolute gap is tiny or the gap is small relative to the larger magnitude.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if diff < 1e-8 {
        return true;
    }
    diff / analytic.abs().max(numeric.abs()) < rel_tol
}

/// Max relative error over two gradient vectors (for reporting).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff < 1e-8 {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}
