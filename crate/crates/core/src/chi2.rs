//! Chi-square detector threshold.

use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Upper tail `P(χ²_dof ≥ t)`.
pub fn chi2_upper_tail(dof: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, t / 2.0)
}

/// Threshold `τ` with `P(χ²_dof ≥ τ) = alpha`, found by bisection on the
/// regularized upper incomplete gamma function.
pub fn detector_threshold(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument(
            "detector needs at least one degree of freedom".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "false-alarm probability must lie in (0, 1), got {alpha}"
        )));
    }
    let mut hi = dof as f64 + 10.0;
    while chi2_upper_tail(dof, hi) > alpha {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_upper_tail(dof, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
