//! Closed-form distribution layer for the post-ZF SNR `γ_i` under imperfect CSI.
//!
//! `γ_i` conditioned on `|r̂_ii|² = y` is non-central χ² with two degrees of
//! freedom, non-centrality `μ_i y` and per-dimension variance `σ²_i`; `|r̂_ii|²`
//! itself is Gamma(`N-M+1`, `σ²_ĥ`). Mixing the two gives the outage CDF as a
//! finite double sum.

use serde::{Deserialize, Serialize};

use crate::channel::{StreamStats, SystemConfig};
use crate::error::{domain, Error, Result};
use crate::numerics::{
    bessel_i0e, generalized_gauss_laguerre, kummer_1f1_int_scaled, ln_factorial,
    lower_incomplete_gamma_regularized, marcum_q1_complement, CompensatedSum,
};

/// Round-off band tolerated around `[0, 1]` before a probability is clamped.
pub const PROBABILITY_BAND: f64 = 1e-12;

/// SNR threshold `e^R - 1` at which a rate of `R` nats per channel use is in outage.
pub fn rate_to_threshold(rate: f64) -> f64 {
    rate.exp_m1()
}

/// Outage target, given either as an SNR threshold or as a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutageTarget {
    Threshold(f64),
    Rate(f64),
}

/// One outage evaluation request. `stream_index` is one-based, as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageQuery {
    pub stream_index: usize,
    pub target: OutageTarget,
}

impl OutageQuery {
    pub fn threshold(stream_index: usize, threshold: f64) -> Self {
        Self {
            stream_index,
            target: OutageTarget::Threshold(threshold),
        }
    }

    pub fn rate(stream_index: usize, rate: f64) -> Self {
        Self {
            stream_index,
            target: OutageTarget::Rate(rate),
        }
    }

    /// `γ_th`, converting a rate if needed.
    pub fn gamma_th(&self) -> Result<f64> {
        let x = match self.target {
            OutageTarget::Threshold(x) => x,
            OutageTarget::Rate(r) => {
                if !(r >= 0.0) || !r.is_finite() {
                    return domain(format!("rate must be finite and >= 0, got {r}"));
                }
                rate_to_threshold(r)
            }
        };
        if !(x >= 0.0) || !x.is_finite() {
            return domain(format!("threshold must be finite and >= 0, got {x}"));
        }
        Ok(x)
    }

    /// Zero-based stream index, checked against `cfg`.
    pub fn stream(&self, cfg: &SystemConfig) -> Result<usize> {
        if self.stream_index == 0 || self.stream_index > cfg.n_streams {
            return domain(format!(
                "stream index {} outside [1, {}]",
                self.stream_index, cfg.n_streams
            ));
        }
        Ok(self.stream_index - 1)
    }

    pub fn evaluate(&self, cfg: &SystemConfig, stats: &StreamStats) -> Result<f64> {
        outage_cdf(cfg, stats, self.stream(cfg)?, self.gamma_th()?)
    }
}

fn check_stream(stats: &StreamStats, i: usize) -> Result<()> {
    if i >= stats.mu.len() {
        return domain(format!("stream index {i} out of range for {} streams", stats.mu.len()));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return domain(format!("{name} must be finite and >= 0, got {v}"));
    }
    Ok(())
}

/// Clamps a probability that may carry round-off, rejecting anything outside the band.
pub(crate) fn clamp_probability(what: &str, v: f64) -> Result<f64> {
    if !(v >= -PROBABILITY_BAND && v <= 1.0 + PROBABILITY_BAND) {
        return Err(Error::Numerical(format!("{what} evaluated to {v}, outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// `P(γ_i <= x | |r̂_ii|² = y) = 1 - Q1(sqrt(μ_i y/σ²_i), sqrt(x/σ²_i))`.
pub fn cdf_conditional(stats: &StreamStats, i: usize, y: f64, x: f64) -> Result<f64> {
    check_stream(stats, i)?;
    check_nonneg("y", y)?;
    check_nonneg("x", x)?;
    let s2 = stats.sigma_dof_sq[i];
    marcum_q1_complement((stats.mu[i] * y / s2).sqrt(), (x / s2).sqrt())
}

/// Rician-power density of `γ_i` given `|r̂_ii|² = y`.
pub fn pdf_conditional(stats: &StreamStats, i: usize, y: f64, x: f64) -> Result<f64> {
    check_stream(stats, i)?;
    check_nonneg("y", y)?;
    check_nonneg("x", x)?;
    let s2 = stats.sigma_dof_sq[i];
    let lam = stats.mu[i] * y;
    // e^{-(x+λ)/2σ²} I0(√(λx)/σ²) written with the scaled Bessel function
    let arg = (lam * x).sqrt() / s2;
    let gap = x.sqrt() - lam.sqrt();
    Ok((-gap * gap / (2.0 * s2)).exp() * bessel_i0e(arg)? / (2.0 * s2))
}

/// Gamma(`N-M+1`, `σ²_ĥ`) density of `|r̂_ii|²`.
pub fn pdf_r_sq(cfg: &SystemConfig, stats: &StreamStats, i: usize, y: f64) -> Result<f64> {
    check_stream(stats, i)?;
    check_nonneg("y", y)?;
    let k = (cfg.n_rx - cfg.n_streams) as u64;
    let scale = stats.sigma_hhat_sq[i];
    if y == 0.0 {
        return Ok(if k == 0 { 1.0 / scale } else { 0.0 });
    }
    let ln = k as f64 * y.ln() - y / scale - ln_factorial(k) - (k + 1) as f64 * scale.ln();
    Ok(ln.exp())
}

/// Outage probability `F_γi(x) = P(γ_i <= x)` as a finite double sum.
///
/// With `K = N - M`, `c = pσ²_e` and `A = σ²_e/σ²_ĥ`,
///
/// `F(x) = 1 - e^{-x/(pσ²_h)} [1 + Σ_{l=1}^{K} A^l Σ_{k=0}^{l-1} (1-l)_k (-1)^k (x/c)^{k+1} / (k! (2)_k)]`.
///
/// With minimum training `c = 1` and `A = 1/(pσ²_h + 1)`. Every summand is
/// positive because `(1-l)_k (-1)^k = (l-1)!/(l-1-k)!`, so the terms are built
/// by a ratio recurrence instead of factorials. Small outages, where the
/// leading `1 -` cancels, are evaluated from a positive lower-tail series.
pub fn outage_cdf(cfg: &SystemConfig, stats: &StreamStats, i: usize, x: f64) -> Result<f64> {
    check_stream(stats, i)?;
    check_nonneg("x", x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let k_max = cfg.n_rx - cfg.n_streams;
    let p = cfg.power;
    let s_h = cfg.sigma_h_sq[i];
    let a = stats.sigma_e_sq / stats.sigma_hhat_sq[i];
    let xs = x / (p * stats.sigma_e_sq);

    let mut bracket = CompensatedSum::new();
    let mut a_pow = 1.0;
    for l in 1..=k_max {
        a_pow *= a;
        if a_pow == 0.0 {
            break;
        }
        let mut term = xs;
        let mut inner = CompensatedSum::new();
        inner.add(term);
        for k in 0..l - 1 {
            term *= (l - 1 - k) as f64 * xs / (((k + 1) * (k + 2)) as f64);
            inner.add(term);
        }
        bracket.add(a_pow * inner.value());
    }
    let s = bracket.value();
    if !s.is_finite() {
        return Err(Error::Numerical(format!("outage_cdf: bracket overflowed at x={x}")));
    }
    let u = x / (p * s_h);
    let v = -(s.ln_1p() - u).exp_m1();
    if v >= SMALL_OUTAGE_SWITCH {
        return clamp_probability("outage_cdf", v);
    }
    clamp_probability("outage_cdf", outage_lower_tail(k_max, a, u))
}

/// Below this the complement form `1 - e^{-u}(1 + S)` cancels and the
/// lower-tail series takes over.
const SMALL_OUTAGE_SWITCH: f64 = 0.25;

/// `F = Σ_{j>=1} Poisson(j; u) P(Bin(K, 1-A) <= j-1)`, `u = x/(pσ²_h)`.
///
/// Expanding `e^u - 1 - S` in powers of `x` leaves, for `j <= K`, the
/// negative-binomial tail `Σ_{l>K} C(l-1, j-1) A^l`, which folds into the
/// binomial CDF. All terms are positive, so tiny outages keep full relative
/// accuracy. Summed in the log domain since `A^K` underflows at high power.
fn outage_lower_tail(k: usize, a: f64, u: f64) -> f64 {
    let (ln_a, ln_q) = (a.ln(), (-a).ln_1p());
    let ln_pmf = |b: usize| {
        ln_factorial(k as u64) - ln_factorial(b as u64) - ln_factorial((k - b) as u64)
            + b as f64 * ln_q
            + (k - b) as f64 * ln_a
    };
    let ln_u = u.ln();
    let mut ln_cdf = f64::NEG_INFINITY;
    let mut terms = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    for j in 1.. {
        if j <= k + 1 {
            ln_cdf = ln_add(ln_cdf, ln_pmf(j - 1));
        }
        let t = j as f64 * ln_u - ln_factorial(j as u64) + ln_cdf.min(0.0);
        peak = peak.max(t);
        terms.push(t);
        if j > k && j as f64 > u && t < peak - 40.0 {
            break;
        }
    }
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    (peak + sum.ln() - u).exp()
}

fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Outage probability through confluent hypergeometric functions,
///
/// `F(x) = 1 - e^{-x/(pσ²_h) - x'} [1 + x' Σ_{l=0}^{K} A^l 1F1(l+1; 2; x')]`, `x' = x/(pσ²_e)`.
///
/// Mathematically identical to [`outage_cdf`] (Kummer transformation term by
/// term); kept as an independent cross-check.
pub fn outage_cdf_hypergeometric(cfg: &SystemConfig, stats: &StreamStats, i: usize, x: f64) -> Result<f64> {
    check_stream(stats, i)?;
    check_nonneg("x", x)?;
    let k_max = (cfg.n_rx - cfg.n_streams) as u32;
    let a = stats.sigma_e_sq / stats.sigma_hhat_sq[i];
    let xs = x / (cfg.power * stats.sigma_e_sq);
    let mut sum = CompensatedSum::new();
    sum.add((-xs).exp());
    let mut a_pow = 1.0;
    for l in 0..=k_max {
        sum.add(xs * a_pow * kummer_1f1_int_scaled(l + 1, 2, xs)?);
        a_pow *= a;
    }
    let v = 1.0 - (-x / (cfg.power * cfg.sigma_h_sq[i])).exp() * sum.value();
    clamp_probability("outage_cdf_hypergeometric", v)
}

/// Outage probability as the mixing integral `∫ F(x | y) f_{|r̂|²}(y) dy`,
/// using an `n_nodes`-point generalized Gauss–Laguerre rule matched to the
/// Gamma law of `|r̂_ii|²`.
pub fn outage_cdf_by_quadrature(
    cfg: &SystemConfig,
    stats: &StreamStats,
    i: usize,
    x: f64,
    n_nodes: usize,
) -> Result<f64> {
    check_stream(stats, i)?;
    check_nonneg("x", x)?;
    let rule = generalized_gauss_laguerre(n_nodes, (cfg.n_rx - cfg.n_streams) as f64)?;
    let scale = stats.sigma_hhat_sq[i];
    let mut acc = CompensatedSum::new();
    for (t, w) in rule.pairs() {
        acc.add(w * cdf_conditional(stats, i, scale * t, x)?);
    }
    clamp_probability("outage_cdf_by_quadrature", acc.value())
}

/// Perfect-CSI outage `P(N-M+1, x/(pσ²_h))`, the regularized lower incomplete gamma.
pub fn outage_perfect_csi(cfg: &SystemConfig, i: usize, x: f64) -> Result<f64> {
    cfg.check_stream(i)?;
    check_nonneg("x", x)?;
    let shape = (cfg.n_rx - cfg.n_streams + 1) as u32;
    lower_incomplete_gamma_regularized(shape, x / (cfg.power * cfg.sigma_h_sq[i]))
}

/// Mean of `γ_i`: `p(N-M+1)σ⁴_h/σ²_ĥ + pσ²_h σ²_e/σ²_ĥ`.
///
/// The first term is the signal part `p E|r̂_ii|² (σ²_h/σ²_ĥ)²`, the second
/// the residual `p σ²_Z`. It tends to `pσ²_h(N-M+1)` as `p` grows.
pub fn average_snr(cfg: &SystemConfig, stats: &StreamStats, i: usize) -> Result<f64> {
    check_stream(stats, i)?;
    let p = cfg.power;
    let s_h = cfg.sigma_h_sq[i];
    let s_hh = stats.sigma_hhat_sq[i];
    let shape = (cfg.n_rx - cfg.n_streams + 1) as f64;
    Ok(p * shape * s_h * s_h / s_hh + p * stats.sigma_z_sq[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::derive_stats;
    use crate::numerics::{adaptive_simpson, upper_incomplete_gamma_regularized};

    fn setup(n: usize, m: usize, p: f64, s: f64) -> (SystemConfig, StreamStats) {
        let cfg = SystemConfig::identical(n, m, p, s, 300).unwrap();
        let stats = derive_stats(&cfg).unwrap();
        (cfg, stats)
    }

    #[test]
    fn conditional_cdf_edges() {
        let (_, st) = setup(4, 2, 10.0, 0.1);
        assert_eq!(cdf_conditional(&st, 0, 1.0, 0.0).unwrap(), 0.0);
        for x in [0.01, 0.3, 2.0] {
            let v = cdf_conditional(&st, 0, 0.0, x).unwrap();
            let exact = -(-x / (2.0 * st.sigma_dof_sq[0])).exp_m1();
            assert!((v - exact).abs() < 1e-14);
        }
        assert!(cdf_conditional(&st, 2, 1.0, 1.0).is_err());
        assert!(cdf_conditional(&st, 0, -1.0, 1.0).is_err());
    }

    #[test]
    fn conditional_pdf_normalizes_and_differentiates_cdf() {
        let (_, st) = setup(4, 2, 10.0, 0.1);
        assert!((pdf_conditional(&st, 0, 0.0, 0.0).unwrap() - 1.0 / (2.0 * st.sigma_dof_sq[0])).abs() < 1e-15);
        for y in [0.0, 0.2, 1.0, 3.0] {
            let f = |x: f64| pdf_conditional(&st, 0, y, x).unwrap();
            let total: f64 = (0..40).map(|k| adaptive_simpson(&f, k as f64, k as f64 + 1.0, 1e-14, 50)).sum();
            assert!((total - 1.0).abs() < 1e-8, "y={y}: {total}");
            for x in [0.05, 0.5, 2.0] {
                let h = 1e-5;
                let fd = (cdf_conditional(&st, 0, y, x + h).unwrap() - cdf_conditional(&st, 0, y, x - h).unwrap()) / (2.0 * h);
                assert!((fd - f(x)).abs() < 1e-6, "y={y} x={x}");
            }
        }
    }

    #[test]
    fn gamma_density_moments() {
        let (cfg, st) = setup(4, 4, 10.0, 0.1);
        assert!((pdf_r_sq(&cfg, &st, 0, 0.0).unwrap() - 1.0 / st.sigma_hhat_sq[0]).abs() < 1e-12);
        let (cfg, st) = setup(6, 2, 10.0, 0.1);
        let f = |y: f64| pdf_r_sq(&cfg, &st, 0, y).unwrap();
        let mass: f64 = (0..40).map(|k| adaptive_simpson(&f, k as f64 * 0.25, (k + 1) as f64 * 0.25, 1e-15, 50)).sum();
        let g = |y: f64| y * f(y);
        let mean: f64 = (0..40).map(|k| adaptive_simpson(&g, k as f64 * 0.25, (k + 1) as f64 * 0.25, 1e-15, 50)).sum();
        assert!((mass - 1.0).abs() < 1e-8);
        assert!((mean - 5.0 * st.sigma_hhat_sq[0]).abs() < 1e-8);
    }

    #[test]
    fn outage_edges() {
        let (cfg, st) = setup(6, 2, 10.0, 0.1);
        assert_eq!(outage_cdf(&cfg, &st, 0, 0.0).unwrap(), 0.0);
        let big = 50.0 * 10.0 * 0.1 * 5.0;
        assert!(outage_cdf(&cfg, &st, 0, big).unwrap() >= 1.0 - 1e-6);
        assert!(outage_cdf(&cfg, &st, 0, -1.0).is_err());
    }

    /// Independent form: conditioned on how many of the `K` extra Gamma shape
    /// units come from the estimate's signal share, `γ` is Gamma(b+1, pσ²_h).
    /// With `q = σ²_h/σ²_ĥ`, `F(x) = Σ_b Bin(b; K, q) P(b+1, x/(pσ²_h))`.
    fn binomial_gamma_mixture(cfg: &SystemConfig, st: &StreamStats, x: f64) -> f64 {
        let k = (cfg.n_rx - cfg.n_streams) as u64;
        let q = cfg.sigma_h_sq[0] / st.sigma_hhat_sq[0];
        (0..=k)
            .map(|b| {
                let ln_binom = ln_factorial(k) - ln_factorial(b) - ln_factorial(k - b);
                let w = (ln_binom + b as f64 * q.ln() + (k - b) as f64 * (1.0 - q).ln()).exp();
                w * lower_incomplete_gamma_regularized(b as u32 + 1, x / (cfg.power * cfg.sigma_h_sq[0])).unwrap()
            })
            .sum()
    }

    #[test]
    fn finite_sum_matches_binomial_gamma_mixture() {
        for (n, m) in [(2, 2), (4, 2), (8, 4), (40, 8), (128, 2)] {
            for p in [1.0, 10.0, 100.0] {
                let (cfg, st) = setup(n, m, p, 0.1);
                for x in [0.01, 0.105, 1.0, 5.0, 30.0] {
                    let v = outage_cdf(&cfg, &st, 0, x).unwrap();
                    let o = binomial_gamma_mixture(&cfg, &st, x);
                    assert!((v - o).abs() < 1e-12 + 1e-9 * o, "N={n} M={m} p={p} x={x}: {v} vs {o}");
                }
            }
        }
    }

    #[test]
    fn small_outage_keeps_relative_accuracy() {
        let (cfg, st) = setup(8, 4, 100.0, 0.1);
        let x = 0.1f64.exp_m1();
        let v = outage_cdf(&cfg, &st, 0, x).unwrap();
        let o = binomial_gamma_mixture(&cfg, &st, x);
        assert!((v / o - 1.0).abs() < 1e-8, "{v} vs {o}");
    }

    #[test]
    fn deep_tail_keeps_relative_accuracy() {
        for (n, m) in [(16, 2), (40, 8), (130, 2)] {
            for p_db in [10.0, 20.0, 30.0] {
                let (cfg, st) = setup(n, m, 10f64.powf(p_db / 10.0), 0.1);
                for x in [0.05f64.exp_m1(), 0.5f64.exp_m1(), 3.0] {
                    let v = outage_cdf(&cfg, &st, 0, x).unwrap();
                    let o = binomial_gamma_mixture(&cfg, &st, x);
                    assert!(v > 0.0 && (v / o - 1.0).abs() < 1e-9, "N={n} M={m} {p_db} dB x={x}: {v} vs {o}");
                    assert!(v > outage_perfect_csi(&cfg, 0, x).unwrap());
                }
            }
        }
    }

    #[test]
    fn hypergeometric_form_agrees() {
        for k in [0usize, 1, 2, 8, 32] {
            for ps in [0.1, 1.0, 10.0] {
                let (cfg, st) = setup(2 + k, 2, ps / 0.1, 0.1);
                for x in [0.01, 0.1, 1.0, 5.0] {
                    let a = outage_cdf(&cfg, &st, 0, x).unwrap();
                    let b = outage_cdf_hypergeometric(&cfg, &st, 0, x).unwrap();
                    assert!((a - b).abs() < 1e-9, "K={k} pσ²={ps} x={x}");
                }
            }
        }
    }

    #[test]
    fn longer_training_changes_only_the_error_variance() {
        let cfg = SystemConfig::identical(6, 2, 10.0, 0.1, 300).unwrap().with_pilot_len(8).unwrap();
        let st = derive_stats(&cfg).unwrap();
        for x in [0.05, 0.5, 3.0] {
            let v = outage_cdf(&cfg, &st, 0, x).unwrap();
            assert!((v - binomial_gamma_mixture(&cfg, &st, x)).abs() < 1e-12);
            assert!((v - outage_cdf_hypergeometric(&cfg, &st, 0, x).unwrap()).abs() < 1e-10);
            assert!((v - outage_cdf_by_quadrature(&cfg, &st, 0, x, 128).unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn perfect_csi_forms() {
        let (cfg, _) = setup(3, 3, 10.0, 0.1);
        for x in [0.0, 0.1, 1.0] {
            let v = outage_perfect_csi(&cfg, 0, x).unwrap();
            assert!((v - (-(-x / 1.0f64).exp_m1())).abs() < 1e-15);
        }
        let (cfg, _) = setup(5, 2, 10.0, 0.1);
        let v = outage_perfect_csi(&cfg, 0, 2.0).unwrap();
        assert!((v + upper_incomplete_gamma_regularized(4, 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn high_power_approaches_perfect_csi() {
        // The absolute gap vanishes, but both curves fall as p^-(K+1) and
        // their ratio tends to Σ_b C(K,b) (K+1)! x^{b-K}/(b+1)!, not to 1.
        let x = 0.1f64.exp_m1();
        let k = 2u64;
        let limit: f64 = (0..=k)
            .map(|b| {
                let ln_c = ln_factorial(k) - ln_factorial(b) - ln_factorial(k - b);
                (ln_c + ln_factorial(k + 1) - ln_factorial(b + 1)).exp() * x.powi(b as i32 - k as i32)
            })
            .sum();
        let mut last_gap = f64::INFINITY;
        let mut ratio = 0.0;
        for p in [10.0, 1e2, 1e3, 1e4] {
            let (cfg, st) = setup(4, 2, p, 0.1);
            let imperfect = outage_cdf(&cfg, &st, 0, x).unwrap();
            let perfect = outage_perfect_csi(&cfg, 0, x).unwrap();
            assert!(imperfect >= perfect);
            let gap = imperfect - perfect;
            assert!(gap < last_gap);
            last_gap = gap;
            ratio = imperfect / perfect;
        }
        assert!(last_gap < 1e-7);
        assert!((ratio / limit - 1.0).abs() < 0.02, "{ratio} vs {limit}");
    }

    #[test]
    fn average_snr_values() {
        let (cfg, st) = setup(4, 2, 10.0, 0.1);
        assert!((average_snr(&cfg, &st, 0).unwrap() - 2.0).abs() < 1e-14);
        let (cfg, st) = setup(4, 2, 1e6, 0.1);
        let asymptote = 1e6 * 0.1 * 3.0;
        assert!((average_snr(&cfg, &st, 0).unwrap() / asymptote - 1.0).abs() < 1e-5);
    }

    #[test]
    fn query_conversion() {
        let (cfg, st) = setup(4, 2, 10.0, 0.1);
        let q = OutageQuery::rate(2, 0.1);
        assert!((q.gamma_th().unwrap() - 0.1f64.exp_m1()).abs() < 1e-17);
        assert_eq!(q.stream(&cfg).unwrap(), 1);
        assert_eq!(
            q.evaluate(&cfg, &st).unwrap(),
            outage_cdf(&cfg, &st, 1, 0.1f64.exp_m1()).unwrap()
        );
        assert!(OutageQuery::threshold(0, 1.0).stream(&cfg).is_err());
        assert!(OutageQuery::threshold(3, 1.0).stream(&cfg).is_err());
        assert!(OutageQuery::rate(1, -0.1).gamma_th().is_err());
    }
}
