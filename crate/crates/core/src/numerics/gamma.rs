use super::LogSum;
use crate::error::{domain, Result};

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    statrs::function::factorial::ln_factorial(n)
}

/// Regularized upper incomplete gamma `Γ(s, x)/Γ(s)` for integer `s >= 1`.
///
/// Uses the finite sum `e^{-x} Σ_{k<s} x^k/k!`, accumulated in the log domain.
pub fn upper_incomplete_gamma_regularized(s: u32, x: f64) -> Result<f64> {
    check_args(s, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(upper_finite_sum(s, x).exp().clamp(0.0, 1.0))
}

/// Regularized lower incomplete gamma `γ(s, x)/Γ(s)` for integer `s >= 1`.
///
/// Below the mean the positive tail series is summed directly, so tiny lower
/// tails keep their relative accuracy.
pub fn lower_incomplete_gamma_regularized(s: u32, x: f64) -> Result<f64> {
    check_args(s, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x < s as f64 + 1.0 {
        Ok(lower_series_ln(s as f64, x).exp().clamp(0.0, 1.0))
    } else {
        Ok((1.0 - upper_finite_sum(s, x).exp()).clamp(0.0, 1.0))
    }
}

fn check_args(s: u32, x: f64) -> Result<()> {
    if s == 0 {
        return domain("incomplete gamma: shape must be a positive integer");
    }
    if !(x >= 0.0) {
        return domain(format!("incomplete gamma: argument must be >= 0, got {x}"));
    }
    Ok(())
}

fn upper_finite_sum(s: u32, x: f64) -> f64 {
    let lnx = x.ln();
    let mut acc = LogSum::new();
    let mut l = -x;
    for k in 0..s {
        if k > 0 {
            l += lnx - (k as f64).ln();
        }
        acc.add(l);
    }
    acc.ln()
}

/// `ln P(a, x)` for integer-valued `a > 0` via
/// `P(a, x) = e^{-x} x^a / a! · Σ_n x^n / ((a+1)…(a+n))`.
/// Converges geometrically once `a + n > x`.
pub(crate) fn lower_series_ln(a: f64, x: f64) -> f64 {
    let lead = -x + a * x.ln() - statrs::function::gamma::ln_gamma(a + 1.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 1.0;
    loop {
        term *= x / (a + n);
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
        n += 1.0;
    }
    lead + sum.ln()
}
