use super::Tolerance;
use crate::error::{Error, Result};

/// Bisection for a sign change of a monotone `f` on `[lo, hi]`.
///
/// Returns once `|f(x)| <= abs_tol` or the bracket width is at most
/// `rel_tol·|x|`. Bisection halves the bracket, so `max_terms` also caps the
/// iteration count.
pub fn bisect_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64> {
    tol.validate()?;
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::Numerical(format!("bisect_root: NaN at bracket ends [{lo}, {hi}]")));
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    for _ in 0..tol.max_terms.min(2_000) {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid.abs() <= tol.abs_tol || (hi - lo) <= tol.rel_tol * mid.abs() || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
