//! Rate design, finite-blocklength error probability, goodput and the choice
//! of how many streams to transmit.
//!
//! Rates are in nats per channel use throughout.

use std::cell::Cell;

use serde::Serialize;

use crate::analytics::{outage_cdf, pdf_conditional, rate_to_threshold};
use crate::channel::{derive_stats, StreamStats, SystemConfig, MIN_BLOCKLENGTH};
use crate::error::{domain, Error, Result};
use crate::numerics::{
    adaptive_simpson, bisect_root, gaussian_q, generalized_gauss_laguerre, CompensatedSum, Tolerance,
};

/// Outer Gauss–Laguerre order for the expectation over `|r̂_ii|²`.
const OUTER_NODES: usize = 64;
/// Absolute accuracy requested from each inner integral.
const INNER_EPS: f64 = 1e-13;
/// `e^{-37} ≈ 8.5e-17`: the inner integral ignores density below this level.
const DENSITY_CUTOFF_LN: f64 = 37.0;
/// Step of the centered difference used for `dG_LB/dM`.
const LB_DERIVATIVE_STEP: f64 = 1e-4;

/// Per-stream rates together with the target error rate and data length they were chosen for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePlan {
    pub rates: Vec<f64>,
    pub epsilon: f64,
    pub blocklength: usize,
}

impl RatePlan {
    pub fn new(rates: Vec<f64>, epsilon: f64, blocklength: usize) -> Result<Self> {
        let plan = Self {
            rates,
            epsilon,
            blocklength,
        };
        plan.check_fields()?;
        Ok(plan)
    }

    /// Every stream uses the same rate.
    pub fn uniform(rate: f64, n_streams: usize, epsilon: f64, blocklength: usize) -> Result<Self> {
        Self::new(vec![rate; n_streams], epsilon, blocklength)
    }

    /// Rates from [`design_rate`] for every stream of `cfg`.
    pub fn designed(cfg: &SystemConfig, stats: &StreamStats, epsilon: f64) -> Result<Self> {
        let rates = (0..cfg.n_streams)
            .map(|i| design_rate(cfg, stats, i, epsilon))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rates, epsilon, cfg.data_len)
    }

    fn check_fields(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return domain(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return domain(format!("rates must be finite and >= 0, got {r}"));
        }
        Ok(())
    }

    /// Checks the plan against the configuration it will be evaluated on.
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        self.check_fields()?;
        if self.rates.len() != cfg.n_streams {
            return Err(Error::Contract(format!(
                "{} rates for {} streams",
                self.rates.len(),
                cfg.n_streams
            )));
        }
        if self.blocklength != cfg.data_len {
            return Err(Error::Contract(format!(
                "plan blocklength {} differs from the configured data length {}",
                self.blocklength, cfg.data_len
            )));
        }
        Ok(())
    }
}

/// One stream's contribution to the goodput.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamTerm {
    pub rate: f64,
    pub error_prob: f64,
    /// `rate · (1 - error_prob)`.
    pub delivered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodputReport {
    pub goodput: f64,
    /// Present for identical statistics and a common rate.
    pub goodput_lower_bound: Option<f64>,
    /// Filled in by stream-count optimization.
    pub m_star: Option<usize>,
    pub m_star_lb: Option<usize>,
    pub per_stream_terms: Vec<StreamTerm>,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return domain(format!("rate must be finite and >= 0, got {rate}"));
    }
    Ok(())
}

/// Largest rate whose outage probability equals `epsilon`: solves
/// `F_γi(e^R - 1) = ε` by bisection. The `O(ln L / L)` refinement is dropped.
pub fn design_rate(cfg: &SystemConfig, stats: &StreamStats, i: usize, epsilon: f64) -> Result<f64> {
    cfg.check_stream(i)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    let f = |rate: f64| outage_cdf(cfg, stats, i, rate_to_threshold(rate));

    let mut hi = 1.0;
    while f(hi)? <= epsilon {
        hi *= 2.0;
        if hi > 700.0 {
            return Err(Error::Numerical(format!("design_rate: no rate reaches outage {epsilon}")));
        }
    }
    let tol = Tolerance::new((1e-6 * epsilon).min(1e-12), 1e-15, 2_000)?;
    let mut failure = None;
    let rate = bisect_root(
        |r| match f(r) {
            Ok(v) => v - epsilon,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        hi,
        &tol,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let residual = (f(rate)? - epsilon).abs();
    if residual > 1e-9 {
        return Err(Error::Numerical(format!("design_rate: residual {residual:e} at rate {rate}")));
    }
    Ok(rate)
}

/// Normal-approximation error probability of one block for a fixed SNR.
///
/// `Q(√L (ln(1+γ) - R) / √V)` with dispersion `V = 1 - (1+γ)^-2`.
pub fn error_prob_given_snr(snr: f64, rate: f64, blocklength: usize) -> Result<f64> {
    if !(snr >= 0.0) {
        return domain(format!("snr must be >= 0, got {snr}"));
    }
    check_rate(rate)?;
    let capacity = snr.ln_1p();
    let dispersion = -(-2.0 * capacity).exp_m1();
    if dispersion == 0.0 {
        return Ok(if rate > 0.0 { 1.0 } else { 0.5 });
    }
    gaussian_q((blocklength as f64).sqrt() * (capacity - rate) / dispersion.sqrt())
}

/// Finite-blocklength error probability `E[Q(√L (ln(1+γ) - R)/√V)]` over the law of `γ_i`.
///
/// The outer expectation over `|r̂_ii|²` uses a 64-node generalized
/// Gauss–Laguerre rule; the inner one integrates against the conditional
/// Rician-power density with adaptive Simpson, split at `e^R - 1` and cut
/// where the density falls below `1e-16`.
pub fn error_prob_finite_blocklength(
    cfg: &SystemConfig,
    stats: &StreamStats,
    i: usize,
    rate: f64,
    blocklength: usize,
) -> Result<f64> {
    cfg.check_stream(i)?;
    check_rate(rate)?;
    if blocklength == 0 {
        return domain("blocklength must be positive");
    }
    if blocklength < MIN_BLOCKLENGTH {
        log::warn!("normal approximation used at L = {blocklength} < {MIN_BLOCKLENGTH}");
    }
    let rule = generalized_gauss_laguerre(OUTER_NODES, (cfg.n_rx - cfg.n_streams) as f64)?;
    let s2 = stats.sigma_dof_sq[i];
    let spread = (2.0 * s2 * (DENSITY_CUTOFF_LN + (1.0 / (2.0 * s2)).ln().max(0.0))).sqrt();
    let x_th = rate_to_threshold(rate);

    let mut total = CompensatedSum::new();
    for (t, w) in rule.pairs() {
        let y = stats.sigma_hhat_sq[i] * t;
        let centre = (stats.mu[i] * y).sqrt();
        let lo = (centre - spread).max(0.0).powi(2);
        let hi = (centre + spread).powi(2);
        let failure = Cell::new(None);
        let f = |x: f64| match error_prob_given_snr(x, rate, blocklength)
            .and_then(|q| Ok(q * pdf_conditional(stats, i, y, x)?))
        {
            Ok(v) => v,
            Err(_) => {
                failure.set(Some(x));
                f64::NAN
            }
        };
        let mut edges = vec![lo];
        if x_th > lo && x_th < hi {
            edges.push(x_th);
        }
        edges.push(hi);
        let inner: f64 = edges
            .windows(2)
            .map(|e| adaptive_simpson(&f, e[0], e[1], INNER_EPS, 48))
            .sum();
        if let Some(x) = failure.get() {
            return Err(Error::Numerical(format!("error_prob_finite_blocklength: integrand failed at x={x}")));
        }
        // mass below `lo` is below the cutoff, where Q is at most 1
        total.add(w * inner);
    }
    crate::analytics::clamp_probability("error_prob_finite_blocklength", total.value())
}

/// Total goodput `(1 - m_T/L_T) Σ R_i (1 - P_i)`.
///
/// `P_i` is the finite-blocklength error probability, or the outage
/// probability at `e^{R_i} - 1` when `use_outage_approx` is set. With the
/// minimum training length the pilot overhead is `M/L_T`.
pub fn goodput(cfg: &SystemConfig, stats: &StreamStats, plan: &RatePlan, use_outage_approx: bool) -> Result<GoodputReport> {
    plan.validate(cfg)?;
    let mut terms: Vec<StreamTerm> = Vec::with_capacity(cfg.n_streams);
    for (i, &rate) in plan.rates.iter().enumerate() {
        // identical (σ²_h, R) pairs share one evaluation
        let reuse = (0..i).find(|&j| cfg.sigma_h_sq[j] == cfg.sigma_h_sq[i] && plan.rates[j] == rate);
        let error_prob = match reuse {
            Some(j) => terms[j].error_prob,
            None if use_outage_approx => outage_cdf(cfg, stats, i, rate_to_threshold(rate))?,
            None => error_prob_finite_blocklength(cfg, stats, i, rate, plan.blocklength)?,
        };
        terms.push(StreamTerm {
            rate,
            error_prob,
            delivered: rate * (1.0 - error_prob),
        });
    }
    let overhead = 1.0 - cfg.pilot_len as f64 / cfg.frame_len() as f64;
    let goodput = overhead * terms.iter().map(|t| t.delivered).collect::<CompensatedSum>().value();

    let common_rate = plan.rates.windows(2).all(|w| w[0] == w[1]);
    let goodput_lower_bound = if cfg.has_identical_statistics() && common_rate && cfg.pilot_len == cfg.n_streams {
        Some(goodput_lower_bound(cfg, cfg.n_streams, plan.rates[0])?)
    } else {
        None
    };
    Ok(GoodputReport {
        goodput: goodput.max(0.0),
        goodput_lower_bound,
        m_star: None,
        m_star_lb: None,
        per_stream_terms: terms,
    })
}

/// `Σ_{l=0}^{K} A^l (1 + (l+1) B)`, summed term by term.
pub fn lb_sum_direct(a: f64, b: f64, k: usize) -> f64 {
    let mut acc = CompensatedSum::new();
    let mut a_pow = 1.0;
    for l in 0..=k {
        acc.add(a_pow * (1.0 + (l + 1) as f64 * b));
        a_pow *= a;
    }
    acc.value()
}

/// Closed form of [`lb_sum_direct`], valid for real `K > -1`:
///
/// `(1 - A^{K+1})/(1 - A) + B (1 - (K+2) A^{K+1} + (K+1) A^{K+2}) / (1 - A)²`,
/// with the limit `(K+1) + B (K+1)(K+2)/2` at `A = 1`.
pub fn lb_sum_closed(a: f64, b: f64, k: f64) -> f64 {
    if a == 1.0 {
        return (k + 1.0) + b * (k + 1.0) * (k + 2.0) / 2.0;
    }
    let a_k1 = a.powf(k + 1.0);
    let one_minus = 1.0 - a;
    (1.0 - a_k1) / one_minus + b * (1.0 - (k + 2.0) * a_k1 + (k + 1.0) * a_k1 * a) / (one_minus * one_minus)
}

/// Continuous relaxation of the goodput lower bound in the stream count `m`.
fn lb_continuous(n_rx: usize, power: f64, sigma_h_sq: f64, data_len: usize, m: f64, rate: f64) -> f64 {
    let beta = power * sigma_h_sq;
    let a = 1.0 / (beta + 1.0);
    let x = rate_to_threshold(rate);
    let k = n_rx as f64 - m;
    let success = (-(1.0 + 1.0 / beta) * x).exp() * (1.0 + x * lb_sum_closed(a, x / 2.0, k));
    let l = data_len as f64;
    l / (m + l) * m * rate * success
}

fn check_identical(cfg: &SystemConfig) -> Result<()> {
    if !cfg.has_identical_statistics() {
        return Err(Error::Contract("the goodput lower bound needs identical stream statistics".into()));
    }
    Ok(())
}

/// Goodput lower bound for `m` streams at a common rate, identical statistics
/// and minimum training (`m_T = m`).
///
/// Replaces every `1F1(l+1; 2; x)` in the outage expression by `1 + (l+1)x/2`,
/// which can only raise the outage, giving
/// `G_LB = L/(m+L) · m R · e^{-(1+1/(pσ²_h))x} [1 + x Σ_{l=0}^{N-m} A^l (1 + (l+1)x/2)]`
/// with `x = e^R - 1` and `A = 1/(pσ²_h + 1)`.
pub fn goodput_lower_bound(cfg: &SystemConfig, m: usize, rate: f64) -> Result<f64> {
    check_identical(cfg)?;
    check_rate(rate)?;
    if m == 0 || m > cfg.n_rx {
        return domain(format!("stream count {m} outside [1, {}]", cfg.n_rx));
    }
    let beta = cfg.power * cfg.sigma_h_sq[0];
    let x = rate_to_threshold(rate);
    let sum = lb_sum_direct(1.0 / (beta + 1.0), x / 2.0, cfg.n_rx - m);
    let success = (-(1.0 + 1.0 / beta) * x).exp() * (1.0 + x * sum);
    let l = cfg.data_len as f64;
    Ok(l / (m as f64 + l) * m as f64 * rate * success)
}

/// `min{⌊J⌋, N}` (at least 1), where `J` maximizes the continuous relaxation of
/// the goodput lower bound. The derivative is a centered difference and its
/// root is bracketed on `[1/2, N]`; when the bound still increases at `N`, `N`
/// is returned.
pub fn m_star_lower_bound(cfg: &SystemConfig, rate: f64) -> Result<usize> {
    check_identical(cfg)?;
    check_rate(rate)?;
    let n = cfg.n_rx;
    let g = |m: f64| lb_continuous(n, cfg.power, cfg.sigma_h_sq[0], cfg.data_len, m, rate);
    let h = LB_DERIVATIVE_STEP;
    let slope = |m: f64| (g(m + h) - g(m - h)) / (2.0 * h);
    let (lo, hi) = (0.5, n as f64);
    if slope(hi) >= 0.0 {
        return Ok(n);
    }
    if slope(lo) <= 0.0 {
        return Ok(1);
    }
    let j = bisect_root(slope, lo, hi, &Tolerance::new(1e-300, 1e-12, 200)?)?;
    Ok((j.floor() as usize).clamp(1, n))
}

/// One transmitter that may be scheduled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamCandidate {
    pub sigma_h_sq: f64,
    pub rate: f64,
    /// Higher values are served first.
    pub priority: f64,
}

/// The configurations obtained by serving the best `j` of `candidates`, `j = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFamily {
    pub n_rx: usize,
    pub power: f64,
    pub data_len: usize,
    pub candidates: Vec<StreamCandidate>,
    pub allow_short_blocklength: bool,
}

/// Outcome of stream-count optimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamChoice {
    /// Result of the descending scan.
    pub m_star: usize,
    /// `argmax_j G(j)` over the whole family.
    pub exhaustive_argmax: usize,
    /// `G(j)` for `j = 1..=M`.
    pub goodputs: Vec<f64>,
    /// Candidate indices in service order.
    pub order: Vec<usize>,
}

impl StreamFamily {
    /// `m` identical candidates.
    pub fn identical(n_rx: usize, m: usize, power: f64, sigma_h_sq: f64, rate: f64, data_len: usize) -> Self {
        Self {
            n_rx,
            power,
            data_len,
            candidates: vec![
                StreamCandidate {
                    sigma_h_sq,
                    rate,
                    priority: 0.0,
                };
                m
            ],
            allow_short_blocklength: false,
        }
    }

    /// Configuration serving the given candidates with minimum training.
    pub fn config(&self, chosen: &[usize]) -> Result<SystemConfig> {
        let sigmas = chosen.iter().map(|&c| self.candidates[c].sigma_h_sq).collect();
        let mut cfg = SystemConfig {
            n_rx: self.n_rx,
            n_streams: chosen.len(),
            power: self.power,
            sigma_h_sq: sigmas,
            pilot_len: chosen.len(),
            data_len: self.data_len,
            allow_short_blocklength: self.allow_short_blocklength,
        };
        cfg.validate()?;
        cfg.allow_short_blocklength = self.allow_short_blocklength;
        Ok(cfg)
    }

    /// Goodput when serving `chosen`.
    pub fn goodput_of(&self, chosen: &[usize], use_outage_approx: bool) -> Result<f64> {
        let cfg = self.config(chosen)?;
        let stats = derive_stats(&cfg)?;
        let rates = chosen.iter().map(|&c| self.candidates[c].rate).collect();
        let plan = RatePlan::new(rates, 0.5, self.data_len)?;
        Ok(goodput(&cfg, &stats, &plan, use_outage_approx)?.goodput)
    }

    /// Service order: priority descending, ties broken by the expected
    /// delivered rate `R_j (1 - P_out)` with all candidates active, descending.
    pub fn service_order(&self) -> Result<Vec<usize>> {
        let all: Vec<usize> = (0..self.candidates.len()).collect();
        let cfg = self.config(&all)?;
        let stats = derive_stats(&cfg)?;
        let delivered = all
            .iter()
            .map(|&j| {
                let r = self.candidates[j].rate;
                Ok(r * (1.0 - outage_cdf(&cfg, &stats, j, rate_to_threshold(r))?))
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut order = all;
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.candidates[a], &self.candidates[b]);
            cb.priority
                .total_cmp(&ca.priority)
                .then(delivered[b].total_cmp(&delivered[a]))
                .then(a.cmp(&b))
        });
        Ok(order)
    }
}

/// Chooses how many of the family's streams to serve.
///
/// Streams are ranked by [`StreamFamily::service_order`] and `G(j)` serves the
/// top `j`. Scanning `j = M, M-1, …, 2`, the first `j` with `G(j) >= G(j-1)`
/// is returned, or 1 if there is none. The exhaustive argmax is reported next
/// to it; the two agree whenever `G` is unimodal.
pub fn optimize_streams(family: &StreamFamily, use_outage_approx: bool) -> Result<StreamChoice> {
    let m = family.candidates.len();
    if m == 0 {
        return domain("optimize_streams: empty stream family");
    }
    if m > family.n_rx {
        return domain(format!("optimize_streams: {m} candidates exceed N = {}", family.n_rx));
    }
    let order = family.service_order()?;
    let goodputs = (1..=m)
        .map(|j| family.goodput_of(&order[..j], use_outage_approx))
        .collect::<Result<Vec<f64>>>()?;
    let m_star = (2..=m).rev().find(|&j| goodputs[j - 1] >= goodputs[j - 2]).unwrap_or(1);
    let exhaustive_argmax = goodputs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, &g)| if g > best.1 { (j, g) } else { best })
        .0
        + 1;
    Ok(StreamChoice {
        m_star,
        exhaustive_argmax,
        goodputs,
        order,
    })
}
