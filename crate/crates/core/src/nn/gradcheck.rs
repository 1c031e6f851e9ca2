//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Step used for every coordinate.
pub const FD_STEP: f64 = 1e-5;

/// Compares `analytic` against central differences of `f` at `params`.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
) -> Result<f64> {
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} params but {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    if !params.iter().chain(analytic).all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite probe point or gradient".into()));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let plus = f(&probe);
        probe[i] = orig - FD_STEP;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!("non-finite function value at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
