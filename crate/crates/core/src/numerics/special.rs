use libm::erfc;

use crate::error::{domain, Result};

/// Gaussian tail probability `Q(x) = P(Z > x)` for a standard normal `Z`.
///
/// Evaluated through `erfc` so the upper tail keeps full relative accuracy.
pub fn gaussian_q(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("gaussian_q: non-finite argument {x}"));
    }
    Ok((0.5 * erfc(x / std::f64::consts::SQRT_2)).clamp(0.0, 1.0))
}

/// Above this argument the power series is replaced by the asymptotic expansion.
const I0_SERIES_LIMIT: f64 = 25.0;

/// Largest argument for which the unscaled `I0` is returned.
const I0_OVERFLOW_LIMIT: f64 = 700.0;

/// Modified Bessel function of the first kind, order zero.
///
/// Arguments above 700 are rejected; use [`bessel_i0e`] there.
pub fn bessel_i0(x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return domain(format!("bessel_i0: argument must be finite and >= 0, got {x}"));
    }
    if x > I0_OVERFLOW_LIMIT {
        return domain(format!(
            "bessel_i0: I0({x}) overflows, use the scaled form bessel_i0e"
        ));
    }
    if x <= I0_SERIES_LIMIT {
        return Ok(i0_series(x));
    }
    Ok(i0e_asymptotic(x) * x.exp())
}

/// Exponentially scaled Bessel function `e^{-x} I0(x)`, finite for every `x >= 0`.
pub fn bessel_i0e(x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return domain(format!("bessel_i0e: argument must be finite and >= 0, got {x}"));
    }
    if x <= I0_SERIES_LIMIT {
        Ok(i0_series(x) * (-x).exp())
    } else {
        Ok(i0e_asymptotic(x))
    }
}

// sum_k (x^2/4)^k / (k!)^2, all terms positive
fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term <= sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

// e^{-x} I0(x) ~ (2 pi x)^{-1/2} sum_k ((2k-1)!!)^2 / (k! 8^k x^k), truncated at the smallest term
fn i0e_asymptotic(x: f64) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0;
    let mut k = 1.0f64;
    loop {
        let next = term * (2.0 * k - 1.0).powi(2) / (8.0 * k * x);
        if next.abs() >= term.abs() || next.abs() <= 1e-17 * sum {
            if next.abs() < term.abs() {
                sum += next;
            }
            break;
        }
        sum += next;
        term = next;
        k += 1.0;
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}
