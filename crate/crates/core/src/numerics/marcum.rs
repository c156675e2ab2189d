//! First-order Marcum Q function.
//!
//! `Q1(a, b)` is the survival function of `sqrt(X)` where `X` is non-central
//! chi-squared with two degrees of freedom and non-centrality `a^2`. Both tails
//! are written as Poisson mixtures of regularized incomplete gammas,
//!
//! ```text
//! Q1(a, b)     = Σ_j Pois(j; a²/2) · Q(j+1, b²/2)
//! 1 - Q1(a, b) = Σ_j Pois(j; a²/2) · P(j+1, b²/2)
//! ```
//!
//! which is the Bessel series `e^{-(a²+b²)/2} Σ (a/b)^k I_k(ab)` regrouped into
//! positive terms. The smaller tail is always summed directly and the other one
//! obtained as its complement, so outage-sized probabilities never come from a
//! cancelling subtraction.

use super::{gamma::lower_series_ln, ln_factorial, log_add_exp, LogSum, Tolerance};
use crate::error::{domain, Error, Result};

/// Beyond this separation of `a` and `b` the small tail is below `1e-340`.
const SEPARATION_CLAMP: f64 = 40.0;

pub fn marcum_q1(a: f64, b: f64) -> Result<f64> {
    marcum_q1_with(a, b, &Tolerance::default())
}

pub fn marcum_q1_with(a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
    Ok(tails(a, b, tol)?.upper)
}

/// `1 - Q1(a, b)`, the CDF of the Rician envelope, accurate when it is small.
pub fn marcum_q1_complement(a: f64, b: f64) -> Result<f64> {
    Ok(tails(a, b, &Tolerance::default())?.lower)
}

#[derive(Debug, Clone, Copy)]
struct Tails {
    lower: f64,
    upper: f64,
}

impl Tails {
    fn from_lower(lower: f64) -> Self {
        let lower = lower.clamp(0.0, 1.0);
        Self {
            lower,
            upper: 1.0 - lower,
        }
    }

    fn from_upper(upper: f64) -> Self {
        let upper = upper.clamp(0.0, 1.0);
        Self {
            lower: 1.0 - upper,
            upper,
        }
    }
}

fn tails(a: f64, b: f64, tol: &Tolerance) -> Result<Tails> {
    if !(a >= 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
        return domain(format!(
            "marcum_q1: arguments must be finite and >= 0, got ({a}, {b})"
        ));
    }
    if b == 0.0 {
        return Ok(Tails::from_upper(1.0));
    }
    let y = 0.5 * b * b;
    if a == 0.0 {
        return Ok(Tails {
            lower: -(-y).exp_m1(),
            upper: (-y).exp(),
        });
    }
    if b - a > SEPARATION_CLAMP {
        return Ok(Tails::from_upper(0.0));
    }
    if a - b > SEPARATION_CLAMP {
        return Ok(Tails::from_lower(0.0));
    }
    let lam = 0.5 * a * a;
    if y < lam + 1.0 {
        Ok(Tails::from_lower(lower_tail_ln(lam, y, tol)?.exp()))
    } else {
        Ok(Tails::from_upper(upper_tail_ln(lam, y, tol)?.exp()))
    }
}

fn term_budget(lam: f64, y: f64, tol: &Tolerance) -> usize {
    tol.max_terms + (2.0 * (lam + y)) as usize
}

/// `ln Σ_j Pois(j; lam) P(j+1, y)`, summed from a Poisson upper cut-off down to
/// zero so the incomplete gammas are built by adding positive terms.
fn lower_tail_ln(lam: f64, y: f64, tol: &Tolerance) -> Result<f64> {
    // Past this index the Poisson tail is below e^{-50} of the mode, and since
    // P(j+1, y) decreases in j the dropped mass is relatively smaller still.
    let top = (lam + 10.0 * lam.sqrt() + 40.0).ceil() as usize;
    if top > term_budget(lam, y, tol) {
        return Err(Error::Convergence(format!(
            "marcum_q1: {top} terms needed for lambda={lam}"
        )));
    }
    let (ln_lam, ln_y) = (lam.ln(), y.ln());
    let mut ln_p = lower_series_ln((top + 1) as f64, y);
    let mut acc = LogSum::new();
    for j in (0..=top).rev() {
        let jf = j as f64;
        let ln_fact = ln_factorial(j as u64);
        acc.add(-lam + jf * ln_lam - ln_fact + ln_p);
        ln_p = log_add_exp(ln_p, -y + jf * ln_y - ln_fact);
    }
    Ok(acc.ln())
}

/// `ln Σ_j Pois(j; lam) Q(j+1, y)`, summed upward with a term-ratio stopping rule.
fn upper_tail_ln(lam: f64, y: f64, tol: &Tolerance) -> Result<f64> {
    let (ln_lam, ln_y) = (lam.ln(), y.ln());
    let budget = term_budget(lam, y, tol);
    let stop_margin = tol.rel_tol.ln() - 7.0;
    let mut ln_q = -y;
    let mut acc = LogSum::new();
    for j in 0..budget {
        let jf = j as f64;
        let ln_w = -lam + jf * ln_lam - ln_factorial(j as u64);
        acc.add(ln_w + ln_q);
        let ln_fact_next = ln_factorial(j as u64 + 1);
        ln_q = log_add_exp(ln_q, -y + (jf + 1.0) * ln_y - ln_fact_next);
        let ratio = lam / (jf + 2.0);
        if ratio < 1.0 {
            // Q <= 1, so the remaining sum is bounded by a geometric Poisson tail.
            let ln_tail = ln_w + ln_lam - (jf + 1.0).ln() - (-ratio).ln_1p();
            if ln_tail < acc.ln() + stop_margin {
                return Ok(acc.ln());
            }
        }
    }
    Err(Error::Convergence(format!(
        "marcum_q1: no convergence in {budget} terms for lambda={lam}, y={y}"
    )))
}
