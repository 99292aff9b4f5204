//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use crate::tensor::Tensor;

/// Step used by all gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Default acceptance threshold for [`relative_error`].
pub const FD_TOLERANCE: f64 = 1e-5;

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute for
/// gradients below one.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// A coordinate at which the analytic and numeric gradients disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

/// Compares `analytic` against central differences of `f` at every
/// coordinate of `x`. Returns the worst coordinate when it exceeds `tol`.
pub fn check_gradient(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    tol: f64,
) -> Result<f64, Mismatch> {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape must match input");
    let mut worst = Mismatch {
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        error: 0.0,
    };
    let mut probe = x.clone();
    for i in 0..x.len() {
        let x0 = x.data()[i];
        let numeric = central_difference(
            |v| {
                probe.data_mut()[i] = v;
                f(&probe)
            },
            x0,
            FD_STEP,
        );
        probe.data_mut()[i] = x0;
        let a = analytic.data()[i];
        let error = relative_error(a, numeric);
        if error > worst.error || error.is_nan() {
            worst = Mismatch {
                index: i,
                analytic: a,
                numeric,
                error,
            };
        }
    }
    if worst.error > tol || worst.error.is_nan() {
        Err(worst)
    } else {
        Ok(worst.error)
    }
}
