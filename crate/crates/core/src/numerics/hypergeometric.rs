use super::{CompensatedSum, Tolerance};
use crate::error::{domain, Error, Result};

/// Rising factorial `(a)_k = a (a+1) … (a+k-1)`, with `(a)_0 = 1`.
pub fn pochhammer(a: f64, k: u32) -> f64 {
    (0..k).map(|j| a + j as f64).product()
}

/// Kummer's confluent hypergeometric function `1F1(a; b; x)` for positive
/// integer parameters.
///
/// When `a >= b` the Kummer transformation `1F1(a;b;x) = e^x 1F1(b-a;b;-x)`
/// turns the series into a polynomial of degree `a - b`. Otherwise the
/// positive-argument series is summed directly with periodic renormalization.
pub fn kummer_1f1_int(a: u32, b: u32, x: f64) -> Result<f64> {
    check(a, b, x)?;
    if a == 0 {
        return Ok(1.0);
    }
    if a >= b {
        return Ok(x.exp() * terminating(a - b, b, -x));
    }
    let tol = Tolerance::default();
    if x >= 0.0 {
        Ok(positive_series_ln(a as f64, b as f64, x, &tol)?.exp())
    } else {
        Ok((x + positive_series_ln((b - a) as f64, b as f64, -x, &tol)?).exp())
    }
}

/// `e^{-x} 1F1(a; b; x)`, the overflow-safe companion of [`kummer_1f1_int`].
pub fn kummer_1f1_int_scaled(a: u32, b: u32, x: f64) -> Result<f64> {
    check(a, b, x)?;
    if a == 0 {
        return Ok((-x).exp());
    }
    if a >= b {
        return Ok(terminating(a - b, b, -x));
    }
    let tol = Tolerance::default();
    if x >= 0.0 {
        Ok((positive_series_ln(a as f64, b as f64, x, &tol)? - x).exp())
    } else {
        Ok(positive_series_ln((b - a) as f64, b as f64, -x, &tol)?.exp())
    }
}

fn check(_a: u32, b: u32, x: f64) -> Result<()> {
    if b == 0 {
        return domain("kummer_1f1_int: b must be a positive integer");
    }
    if !x.is_finite() || x < 0.0 {
        return domain(format!("kummer_1f1_int: argument must be finite and non-negative, got {x}"));
    }
    Ok(())
}

/// `1F1(-n; b; z) = Σ_{k=0}^{n} (-n)_k z^k / ((b)_k k!)`.
fn terminating(n: u32, b: u32, z: f64) -> f64 {
    let mut sum = CompensatedSum::new();
    let mut term = 1.0;
    sum.add(term);
    for k in 0..n {
        let kf = k as f64;
        term *= (kf - n as f64) * z / ((b as f64 + kf) * (kf + 1.0));
        sum.add(term);
    }
    sum.value()
}

/// `ln Σ_k (a)_k x^k / ((b)_k k!)` for `a, b > 0` and `x >= 0`.
///
/// Terms are positive, so they are summed in linear scale and renormalized
/// whenever the partial sum grows large.
fn positive_series_ln(a: f64, b: f64, x: f64, tol: &Tolerance) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut ln_scale = 0.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..tol.max_terms + (4.0 * x) as usize {
        let kf = k as f64;
        let ratio = (a + kf) * x / ((b + kf) * (kf + 1.0));
        term *= ratio;
        sum += term;
        if sum > 1e200 {
            ln_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        // once the ratio is below 1/2 the remaining tail is at most the last term
        if ratio < 0.5 && term <= 0.25 * f64::EPSILON * sum {
            return Ok(ln_scale + sum.ln());
        }
    }
    Err(Error::Convergence(format!(
        "kummer_1f1_int: series for a={a}, b={b}, x={x} did not converge"
    )))
}
