//! Reproducible Monte-Carlo estimates compared against the closed forms.
//!
//! Trial `t` always draws from substream `t` of the plan's seed, so results do
//! not depend on how trials are batched or how many workers run them.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{average_snr, outage_cdf};
use crate::channel::{derive_stats, simulate_stream_snr, StreamStats, SystemConfig};
use crate::error::{domain, Error, Result};
use crate::linalg::RngHandle;
use crate::numerics::CompensatedSum;
use crate::planner::{error_prob_finite_blocklength, error_prob_given_snr};

/// Reports based on fewer expected events than this carry a warning.
pub const MIN_EXPECTED_EVENTS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialPlan {
    pub n_trials: u64,
    pub seed: u64,
    pub batch_size: u64,
    pub confidence_sigmas: f64,
}

impl TrialPlan {
    /// Plan with batches of at most 2^16 trials and a 4σ acceptance band.
    pub fn new(n_trials: u64, seed: u64) -> Result<Self> {
        let plan = Self {
            n_trials,
            seed,
            batch_size: n_trials.clamp(1, 1 << 16),
            confidence_sigmas: 4.0,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_batch_size(mut self, batch_size: u64) -> Result<Self> {
        self.batch_size = batch_size;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_trials < self.batch_size {
            return domain(format!(
                "need n_trials >= batch_size >= 1, got {} and {}",
                self.n_trials, self.batch_size
            ));
        }
        if !(self.confidence_sigmas > 0.0) {
            return domain(format!("confidence_sigmas must be positive, got {}", self.confidence_sigmas));
        }
        Ok(())
    }

    pub fn n_batches(&self) -> u64 {
        self.n_trials.div_ceil(self.batch_size)
    }
}

/// Analytic value against its simulated estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub metric: String,
    pub analytic: f64,
    pub empirical: f64,
    /// Standard error the pass decision is based on.
    pub standard_error: f64,
    pub confidence_sigmas: f64,
    pub pass: bool,
    pub n_trials: u64,
    /// Expected number of events, for proportion estimates.
    pub expected_events: Option<f64>,
    /// Set when the estimate rests on fewer than [`MIN_EXPECTED_EVENTS`] expected events.
    pub low_event_warning: bool,
}

impl ComparisonReport {
    pub fn new(metric: impl Into<String>, analytic: f64, empirical: f64, standard_error: f64, sigmas: f64, n_trials: u64) -> Self {
        Self {
            metric: metric.into(),
            analytic,
            empirical,
            standard_error,
            confidence_sigmas: sigmas,
            pass: (analytic - empirical).abs() <= sigmas * standard_error,
            n_trials,
            expected_events: None,
            low_event_warning: false,
        }
    }

    /// `|analytic - empirical|` in standard errors.
    pub fn z_score(&self) -> f64 {
        let d = (self.analytic - self.empirical).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.standard_error
        }
    }
}

/// Runs `trial` once per trial index, batch-parallel, and returns the outputs in trial order.
pub fn run_trials<T, F>(plan: &TrialPlan, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut RngHandle) -> Result<T> + Sync,
{
    plan.validate()?;
    let batches: Vec<Vec<T>> = (0..plan.n_batches())
        .into_par_iter()
        .map(|b| {
            let start = b * plan.batch_size;
            let end = (start + plan.batch_size).min(plan.n_trials);
            (start..end)
                .map(|t| trial(&mut RngHandle::substream(plan.seed, t)))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Sample mean and its standard error `s/√n`.
pub fn mean_and_standard_error(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return domain("at least two samples are needed for a standard error");
    }
    let mean = samples.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    let ss = samples.iter().map(|s| (s - mean).powi(2)).collect::<CompensatedSum>().value();
    Ok((mean, (ss / (n - 1) as f64 / n as f64).sqrt()))
}

/// Fraction of `samples` strictly below each threshold.
pub fn empirical_cdf(samples: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&x| sorted.partition_point(|&s| s < x) as f64 / sorted.len().max(1) as f64)
        .collect()
}

/// Fraction of simulated frames with `γ_i < threshold`, against the closed-form outage.
///
/// The standard error is the binomial one under the analytic proportion,
/// `√(p₀(1-p₀)/n)`, so a rare event that happens not to occur is judged on
/// the spread it should have had rather than on a zero-width interval.
pub fn estimate_outage(cfg: &SystemConfig, plan: &TrialPlan, i: usize, threshold: f64) -> Result<ComparisonReport> {
    cfg.check_stream(i)?;
    if !(threshold >= 0.0) {
        return domain(format!("threshold must be >= 0, got {threshold}"));
    }
    let stats = derive_stats(cfg)?;
    let analytic = outage_cdf(cfg, &stats, i, threshold)?;
    let hits = run_trials(plan, |rng| Ok(simulate_stream_snr(cfg, rng, i)? < threshold))?;
    let n = plan.n_trials as f64;
    let empirical = hits.iter().filter(|&&h| h).count() as f64 / n;
    let se = (analytic * (1.0 - analytic) / n).sqrt();
    let mut report = ComparisonReport::new(
        format!("outage[stream={},x={threshold}]", i + 1),
        analytic,
        empirical,
        se,
        plan.confidence_sigmas,
        plan.n_trials,
    );
    let expected = n * analytic.min(1.0 - analytic);
    report.expected_events = Some(expected);
    report.low_event_warning = expected < MIN_EXPECTED_EVENTS;
    if report.low_event_warning {
        log::warn!("{}: only {expected:.2} expected events in {} trials", report.metric, plan.n_trials);
    }
    Ok(report)
}

/// Sample mean of `γ_i` over simulated frames, against the closed-form average SNR.
pub fn estimate_mean_snr(cfg: &SystemConfig, plan: &TrialPlan, i: usize) -> Result<ComparisonReport> {
    cfg.check_stream(i)?;
    let stats = derive_stats(cfg)?;
    let analytic = average_snr(cfg, &stats, i)?;
    let samples = run_trials(plan, |rng| simulate_stream_snr(cfg, rng, i))?;
    let (mean, se) = mean_and_standard_error(&samples)?;
    Ok(ComparisonReport::new(
        format!("mean_snr[stream={}]", i + 1),
        analytic,
        mean,
        se,
        plan.confidence_sigmas,
        plan.n_trials,
    ))
}

/// Draws `γ_i` from its two-stage law: `y ~ Gamma(N-M+1, σ²_ĥ)`, then
/// `γ = |√(μ y) + CN(0, 2σ²)|²`.
pub fn sample_snr(cfg: &SystemConfig, stats: &StreamStats, i: usize, rng: &mut RngHandle) -> Result<f64> {
    let shape = (cfg.n_rx - cfg.n_streams + 1) as f64;
    let gamma = Gamma::new(shape, stats.sigma_hhat_sq[i]).map_err(|e| Error::Domain(e.to_string()))?;
    let y = gamma.sample(rng);
    let sd = stats.sigma_dof_sq[i].sqrt();
    let re = (stats.mu[i] * y).sqrt() + sd * rng.standard_normal();
    let im = sd * rng.standard_normal();
    Ok(re * re + im * im)
}

/// Average of the normal-approximation error probability over sampled `γ_i`,
/// against the quadrature value.
pub fn estimate_error_prob(
    cfg: &SystemConfig,
    plan: &TrialPlan,
    i: usize,
    rate: f64,
    blocklength: usize,
) -> Result<ComparisonReport> {
    cfg.check_stream(i)?;
    let stats = derive_stats(cfg)?;
    let analytic = error_prob_finite_blocklength(cfg, &stats, i, rate, blocklength)?;
    let samples = run_trials(plan, |rng| {
        error_prob_given_snr(sample_snr(cfg, &stats, i, rng)?, rate, blocklength)
    })?;
    let (mean, se) = mean_and_standard_error(&samples)?;
    Ok(ComparisonReport::new(
        format!("p_err[stream={},rate={rate},L={blocklength}]", i + 1),
        analytic,
        mean,
        se,
        plan.confidence_sigmas,
        plan.n_trials,
    ))
}
