//! Command-line front end: preset sweeps, validation suites, rate design and
//! stream-count selection.
//!
//! Every verb reads an optional TOML config (`--config`) and lets flags
//! override it. Output goes to `--out` or stdout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    average_snr, outage_cdf, outage_cdf_by_quadrature, outage_cdf_hypergeometric, outage_perfect_csi,
    rate_to_threshold,
};
use crate::channel::{derive_stats, SystemConfig};
use crate::error::{Error, Result};
use crate::montecarlo::{estimate_error_prob, estimate_mean_snr, estimate_outage, ComparisonReport, TrialPlan};
use crate::planner::{
    design_rate, error_prob_finite_blocklength, goodput, goodput_lower_bound, lb_sum_closed, lb_sum_direct,
    m_star_lower_bound, optimize_streams, RatePlan, StreamFamily,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "zfsp", version, about = "Short-packet multiuser MIMO-ZF under imperfect CSI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate metrics over a one-parameter grid and write plot-ready rows.
    Sweep(SweepArgs),
    /// Run a validation suite and write a JSON report.
    Validate(ValidateArgs),
    /// Maximum rate per stream for a target outage probability.
    RateDesign(PointArgs),
    /// Goodput-maximizing number of streams.
    Mstar(MstarArgs),
    /// Build, numerical settings and preset definitions.
    Info(InfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig1,
    Fig2,
}

/// How the per-stream power follows the antenna count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PowerScaling {
    /// `p` is the configured SNR.
    #[default]
    Fixed,
    /// `p = P/√N`, with `P` the configured SNR.
    SqrtN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweptParameter {
    PDb,
    N,
    M,
    Rate,
    L,
}

impl SweptParameter {
    fn name(self) -> &'static str {
        match self {
            Self::PDb => "p_db",
            Self::N => "n",
            Self::M => "m",
            Self::Rate => "rate",
            Self::L => "l",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Self::N | Self::M | Self::L)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Metric {
    Outage,
    OutagePerfect,
    AvgSnr,
    RateStar,
    PErr,
    Goodput,
    GoodputLb,
    MStar,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Self::Outage => "outage",
            Self::OutagePerfect => "outage_perfect",
            Self::AvgSnr => "avg_snr",
            Self::RateStar => "rate_star",
            Self::PErr => "p_err",
            Self::Goodput => "goodput",
            Self::GoodputLb => "goodput_lb",
            Self::MStar => "m_star",
        }
    }
}

/// `[system]` section: one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n: usize,
    pub m: usize,
    pub snr_db: f64,
    /// One value for every stream, or one per stream.
    pub sigma_h_sq: Vec<f64>,
    pub blocklength: usize,
    /// Defaults to `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_len: Option<usize>,
    pub rate: f64,
    pub epsilon: f64,
    /// One-based stream index used by per-stream metrics.
    #[serde(default = "first_stream")]
    pub stream: usize,
    #[serde(default)]
    pub power_scaling: PowerScaling,
    #[serde(default)]
    pub allow_short_blocklength: bool,
}

fn first_stream() -> usize {
    1
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n: 4,
            m: 2,
            snr_db: 10.0,
            sigma_h_sq: vec![0.1],
            blocklength: 300,
            pilot_len: None,
            rate: 0.1,
            epsilon: 1e-3,
            stream: 1,
            power_scaling: PowerScaling::Fixed,
            allow_short_blocklength: false,
        }
    }
}

/// `[sweep]` section: the swept parameter and its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweptParameter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl SweepSection {
    /// Grid values: the explicit list, or `start, start+step, …, stop` inclusive.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let values = match (&self.values, self.start, self.stop, self.step) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(start), Some(stop), Some(step)) => {
                if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    return config_err(format!("sweep: invalid range {start}:{stop}:{step}"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=count).map(|k| start + k as f64 * step).collect()
            }
            _ => return config_err("sweep: give either `values` or all of `start`, `stop`, `step`"),
        };
        if values.is_empty() {
            return config_err("sweep: empty grid");
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return config_err(format!("sweep: non-finite grid value {v}"));
        }
        if self.parameter.is_integer() {
            if let Some(v) = values.iter().find(|v| v.fract() != 0.0 || **v < 1.0) {
                return config_err(format!("sweep: {} needs positive integers, got {v}", self.parameter.name()));
            }
        }
        Ok(values)
    }
}

/// `[series]` section: one curve per combination of the listed values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rate: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocklength: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Everything a sweep needs; also the on-disk config format.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "SeriesSection::is_empty")]
    pub series: SeriesSection,
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub output: OutputSection,
}

impl SeriesSection {
    fn is_empty(&self) -> bool {
        self.n.is_empty() && self.rate.is_empty() && self.blocklength.is_empty()
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Operating points of the two built-in presets.
    pub fn preset(preset: Preset) -> Self {
        match preset {
            // outage vs input SNR, M = 2, L = 300
            Preset::Fig1 => Self {
                system: SystemSection {
                    n: 2,
                    m: 2,
                    blocklength: 300,
                    ..SystemSection::default()
                },
                sweep: Some(SweepSection {
                    parameter: SweptParameter::PDb,
                    values: None,
                    start: Some(0.0),
                    stop: Some(30.0),
                    step: Some(2.0),
                }),
                series: SeriesSection {
                    n: vec![2, 4, 8, 16],
                    rate: vec![0.05, 0.1, 0.5],
                    blocklength: vec![],
                },
                metrics: vec![Metric::Outage, Metric::OutagePerfect, Metric::PErr],
                output: OutputSection::default(),
            },
            // goodput vs M, N = 128, P_max = 20 dB, p = P_max/√N, L = 200
            Preset::Fig2 => Self {
                system: SystemSection {
                    n: 128,
                    m: 1,
                    snr_db: 20.0,
                    blocklength: 200,
                    power_scaling: PowerScaling::SqrtN,
                    ..SystemSection::default()
                },
                sweep: Some(SweepSection {
                    parameter: SweptParameter::M,
                    values: None,
                    start: Some(1.0),
                    stop: Some(128.0),
                    step: Some(1.0),
                }),
                series: SeriesSection {
                    n: vec![],
                    rate: vec![0.05, 0.1, 0.5],
                    blocklength: vec![],
                },
                metrics: vec![Metric::Goodput, Metric::GoodputLb, Metric::MStar],
                output: OutputSection::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sweep = self.sweep.as_ref().ok_or_else(|| Error::Config("sweep: missing [sweep] section".into()))?;
        sweep.grid()?;
        if self.metrics.is_empty() {
            return config_err("metrics: at least one metric is required");
        }
        for point in self.points()? {
            point.config()?;
        }
        Ok(())
    }

    /// Grid points in output order: series outermost, swept value innermost.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let sweep = self.sweep.as_ref().ok_or_else(|| Error::Config("sweep: missing [sweep] section".into()))?;
        let grid = sweep.grid()?;
        let s = &self.system;
        let ns = if self.series.n.is_empty() { vec![s.n] } else { self.series.n.clone() };
        let rates = if self.series.rate.is_empty() { vec![s.rate] } else { self.series.rate.clone() };
        let ls = if self.series.blocklength.is_empty() {
            vec![s.blocklength]
        } else {
            self.series.blocklength.clone()
        };
        let mut out = Vec::new();
        for &n in &ns {
            for &rate in &rates {
                for &l in &ls {
                    for &v in &grid {
                        let mut p = GridPoint {
                            swept: sweep.parameter,
                            swept_value: v,
                            n,
                            m: s.m,
                            snr_db: s.snr_db,
                            rate,
                            blocklength: l,
                            system: s.clone(),
                        };
                        match sweep.parameter {
                            SweptParameter::PDb => p.snr_db = v,
                            SweptParameter::N => p.n = v as usize,
                            SweptParameter::M => p.m = v as usize,
                            SweptParameter::Rate => p.rate = v,
                            SweptParameter::L => p.blocklength = v as usize,
                        }
                        out.push(p);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One resolved operating point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub swept: SweptParameter,
    pub swept_value: f64,
    pub n: usize,
    pub m: usize,
    pub snr_db: f64,
    pub rate: f64,
    pub blocklength: usize,
    system: SystemSection,
}

/// `10^{dB/10}`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl GridPoint {
    /// Per-stream linear SNR `p`.
    pub fn power(&self) -> f64 {
        let p = db_to_linear(self.snr_db);
        match self.system.power_scaling {
            PowerScaling::Fixed => p,
            PowerScaling::SqrtN => p / (self.n as f64).sqrt(),
        }
    }

    pub fn config(&self) -> Result<SystemConfig> {
        let sig = &self.system.sigma_h_sq;
        let sigmas = match sig.len() {
            1 => vec![sig[0]; self.m],
            k if k == self.m => sig.clone(),
            k => return config_err(format!("sigma_h_sq: {k} values for {} streams", self.m)),
        };
        let cfg = SystemConfig {
            n_rx: self.n,
            n_streams: self.m,
            power: self.power(),
            sigma_h_sq: sigmas,
            pilot_len: self.system.pilot_len.unwrap_or(self.m),
            data_len: self.blocklength,
            allow_short_blocklength: self.system.allow_short_blocklength,
        };
        cfg.validate()?;
        if self.system.stream == 0 || self.system.stream > self.m {
            return config_err(format!("stream: {} outside [1, {}]", self.system.stream, self.m));
        }
        if !(self.rate >= 0.0) || !self.rate.is_finite() {
            return config_err(format!("rate: must be finite and >= 0, got {}", self.rate));
        }
        Ok(cfg)
    }

    fn stream(&self) -> usize {
        self.system.stream - 1
    }

    /// The stream-count family of this point: `N` identical candidates.
    fn family(&self, cfg: &SystemConfig) -> Result<StreamFamily> {
        if !cfg.has_identical_statistics() {
            return Err(Error::Contract("m_star needs identical stream statistics".into()));
        }
        let mut fam = StreamFamily::identical(self.n, self.n, cfg.power, cfg.sigma_h_sq[0], self.rate, self.blocklength);
        fam.allow_short_blocklength = self.system.allow_short_blocklength;
        Ok(fam)
    }

    fn m_star_key(&self) -> String {
        format!("{}|{:e}|{:?}|{:e}|{}", self.n, self.power(), self.system.sigma_h_sq, self.rate, self.blocklength)
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub swept_parameter: &'static str,
    pub swept_value: f64,
    pub n: usize,
    pub m: usize,
    pub p_db: f64,
    pub p_linear: f64,
    pub rate: f64,
    pub blocklength: usize,
    pub epsilon: f64,
    pub metric: &'static str,
    pub value: f64,
}

fn evaluate_metric(point: &GridPoint, metric: Metric, m_star: &BTreeMap<String, usize>) -> Result<f64> {
    let cfg = point.config()?;
    let stats = derive_stats(&cfg)?;
    let i = point.stream();
    let x = rate_to_threshold(point.rate);
    match metric {
        Metric::Outage => outage_cdf(&cfg, &stats, i, x),
        Metric::OutagePerfect => outage_perfect_csi(&cfg, i, x),
        Metric::AvgSnr => average_snr(&cfg, &stats, i),
        Metric::RateStar => design_rate(&cfg, &stats, i, point.system.epsilon),
        Metric::PErr => error_prob_finite_blocklength(&cfg, &stats, i, point.rate, point.blocklength),
        Metric::Goodput => {
            let plan = RatePlan::uniform(point.rate, cfg.n_streams, point.system.epsilon, point.blocklength)?;
            Ok(goodput(&cfg, &stats, &plan, false)?.goodput)
        }
        Metric::GoodputLb => goodput_lower_bound(&cfg, cfg.n_streams, point.rate),
        Metric::MStar => Ok(m_star[&point.m_star_key()] as f64),
    }
}

/// Evaluates a sweep; rows come back in grid order whatever the parallelism.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points = spec.points()?;

    // M* depends on the series, not on the swept value unless that changes the family
    let mut m_star = BTreeMap::new();
    if spec.metrics.contains(&Metric::MStar) {
        let mut families = BTreeMap::new();
        for p in &points {
            families.entry(p.m_star_key()).or_insert_with(|| p.clone());
        }
        let solved = families
            .into_par_iter()
            .map(|(key, p)| {
                let fam = p.family(&p.config()?)?;
                Ok((key, optimize_streams(&fam, false)?.m_star))
            })
            .collect::<Result<Vec<_>>>()?;
        m_star.extend(solved);
    }

    let rows = points
        .par_iter()
        .map(|p| {
            spec.metrics
                .iter()
                .map(|&metric| {
                    Ok(SweepRow {
                        swept_parameter: p.swept.name(),
                        swept_value: p.swept_value,
                        n: p.n,
                        m: p.m,
                        p_db: p.snr_db,
                        p_linear: p.power(),
                        rate: p.rate,
                        blocklength: p.blocklength,
                        epsilon: p.system.epsilon,
                        metric: metric.name(),
                        value: evaluate_metric(p, metric, &m_star)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Full double precision: 17 significant digits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record([
        "swept_parameter",
        "swept_value",
        "n",
        "m",
        "p_db",
        "p_linear",
        "rate",
        "blocklength",
        "epsilon",
        "metric",
        "value",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.swept_parameter.to_string(),
            fmt_f64(r.swept_value),
            r.n.to_string(),
            r.m.to_string(),
            fmt_f64(r.p_db),
            fmt_f64(r.p_linear),
            fmt_f64(r.rate),
            r.blocklength.to_string(),
            fmt_f64(r.epsilon),
            r.metric.to_string(),
            fmt_f64(r.value),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("csv: {other:?}")),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Pass/fail result of a deterministic identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub points: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name: name.into(),
            points: errors.len(),
            max_error,
            tolerance,
            pass: errors.iter().all(|e| *e <= tolerance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    AnalyticIdentities,
    MonteCarlo,
    All,
}

/// Machine-readable validation outcome. Contains no timestamps, so equal
/// inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub suite: Suite,
    pub seed: u64,
    pub n_trials: u64,
    pub rng: &'static str,
    pub passed: bool,
    pub identities: Vec<IdentityCheck>,
    pub comparisons: Vec<ComparisonReport>,
}

fn identical(n: usize, m: usize, p: f64, s: f64, l: usize) -> Result<SystemConfig> {
    SystemConfig::identical(n, m, p, s, l)
}

/// Grid shared by the outage identities: `N - M ∈ {0,1,2,8,32}`, `pσ²_h ∈ {0.1,1,10}`.
fn identity_grid() -> Result<Vec<SystemConfig>> {
    let mut cfgs = Vec::new();
    for k in [0usize, 1, 2, 8, 32] {
        for beta in [0.1, 1.0, 10.0] {
            cfgs.push(identical(2 + k, 2, beta / 0.1, 0.1, 300)?);
        }
    }
    Ok(cfgs)
}

const IDENTITY_X: [f64; 4] = [0.01, 0.1, 1.0, 5.0];

/// Closed-form identities: the two outage forms, the mixing integral, and the
/// goodput-bound sum.
pub fn analytic_identities() -> Result<Vec<IdentityCheck>> {
    let mut hyper = Vec::new();
    let mut mixing = Vec::new();
    for cfg in identity_grid()? {
        let st = derive_stats(&cfg)?;
        for x in IDENTITY_X {
            let f = outage_cdf(&cfg, &st, 0, x)?;
            hyper.push((f - outage_cdf_hypergeometric(&cfg, &st, 0, x)?).abs());
            mixing.push((f - outage_cdf_by_quadrature(&cfg, &st, 0, x, 128)?).abs());
        }
    }
    let mut sums = Vec::new();
    for a in [0.01, 0.1, 0.5, 0.9] {
        for b in [0.01, 0.05, 0.5] {
            for k in [0usize, 1, 8, 126] {
                let d = lb_sum_direct(a, b, k);
                sums.push((d - lb_sum_closed(a, b, k as f64)).abs() / d);
            }
        }
    }
    let mut round_trip = Vec::new();
    let cfg = identical(4, 2, 100.0, 0.1, 300)?;
    let st = derive_stats(&cfg)?;
    for eps in [1e-1, 1e-3, 1e-5] {
        let r = design_rate(&cfg, &st, 0, eps)?;
        round_trip.push((outage_cdf(&cfg, &st, 0, rate_to_threshold(r))? - eps).abs());
    }
    Ok(vec![
        IdentityCheck::new("outage_finite_sum_vs_hypergeometric", &hyper, 1e-9),
        IdentityCheck::new("outage_finite_sum_vs_mixing_integral", &mixing, 1e-6),
        IdentityCheck::new("goodput_bound_sum_direct_vs_closed_relative", &sums, 1e-12),
        IdentityCheck::new("design_rate_round_trip", &round_trip, 1e-9),
    ])
}

/// Simulation against closed forms at the reference operating points.
pub fn monte_carlo_suite(seed: u64, n_trials: u64) -> Result<Vec<ComparisonReport>> {
    let plan = TrialPlan::new(n_trials, seed)?;
    let x = rate_to_threshold(0.1);
    let mut reports = Vec::new();
    for (n, m) in [(2, 2), (4, 2), (8, 4)] {
        for p_db in [10.0, 20.0] {
            let cfg = identical(n, m, db_to_linear(p_db), 0.1, 300)?;
            let mut r = estimate_outage(&cfg, &plan, 0, x)?;
            r.metric = format!("outage[N={n},M={m},p_db={p_db}]");
            reports.push(r);
        }
    }
    let cfg = identical(4, 2, 10.0, 0.1, 300)?;
    let mut r = estimate_mean_snr(&cfg, &plan, 0)?;
    r.metric = "mean_snr[N=4,M=2,p_db=10]".into();
    reports.push(r);
    let mut r = estimate_error_prob(&cfg, &plan, 0, 0.1, 300)?;
    r.metric = "p_err[N=4,M=2,p_db=10,rate=0.1,L=300]".into();
    reports.push(r);
    let long = cfg.with_pilot_len(4)?;
    let mut r = estimate_outage(&long, &plan, 1, x)?;
    r.metric = "outage[N=4,M=2,m_T=4,p_db=10]".into();
    reports.push(r);
    Ok(reports)
}

pub fn run_validation(suite: Suite, seed: u64, n_trials: u64) -> Result<ValidationReport> {
    let identities = match suite {
        Suite::AnalyticIdentities | Suite::All => analytic_identities()?,
        Suite::MonteCarlo => vec![],
    };
    let comparisons = match suite {
        Suite::MonteCarlo | Suite::All => monte_carlo_suite(seed, n_trials)?,
        Suite::AnalyticIdentities => vec![],
    };
    let passed = identities.iter().all(|c| c.pass) && comparisons.iter().all(|c| c.pass);
    Ok(ValidationReport {
        suite,
        seed,
        n_trials,
        rng: "chacha8",
        passed,
        identities,
        comparisons,
    })
}

/// Flags shared by every verb that describes an operating point. Flags win
/// over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct PointArgs {
    /// TOML config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output path (stdout when absent).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Receive antennas N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Streams M.
    #[arg(long)]
    pub m: Option<usize>,
    /// Input SNR in dB.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Large-scale fading, one value or one per stream.
    #[arg(long = "sigma-h-sq", value_delimiter = ',')]
    pub sigma_h_sq: Option<Vec<f64>>,
    /// Data length L in channel uses.
    #[arg(long)]
    pub blocklength: Option<usize>,
    /// Rate in nats per channel use.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Target error probability.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

impl PointArgs {
    fn spec(&self) -> Result<SweepSpec> {
        let mut spec = match (&self.config, self.preset) {
            (Some(_), Some(_)) => return config_err("--config and --preset are mutually exclusive"),
            (Some(path), None) => SweepSpec::load(path).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
                other => other,
            })?,
            (None, Some(p)) => SweepSpec::preset(p),
            (None, None) => SweepSpec::default(),
        };
        let s = &mut spec.system;
        if let Some(v) = self.n {
            s.n = v;
            spec.series.n.clear();
        }
        if let Some(v) = self.m {
            s.m = v;
        }
        if let Some(v) = self.snr_db {
            s.snr_db = v;
        }
        if let Some(v) = &self.sigma_h_sq {
            s.sigma_h_sq = v.clone();
        }
        if let Some(v) = self.blocklength {
            s.blocklength = v;
            spec.series.blocklength.clear();
        }
        if let Some(v) = self.rate {
            s.rate = v;
            spec.series.rate.clear();
        }
        if let Some(v) = self.epsilon {
            s.epsilon = v;
        }
        if let Some(v) = self.format {
            spec.output.format = v;
        }
        if let Some(v) = &self.out {
            spec.output.path = Some(v.clone());
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    pub sweep: Option<SweptParameter>,
    /// Explicit grid values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Option<Vec<f64>>,
    /// Metrics to evaluate at every grid point.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub metrics: Option<Vec<Metric>>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Frames per Monte-Carlo comparison.
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct MstarArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Second data length to contrast with `--blocklength`.
    #[arg(long, value_name = "INT")]
    pub compare_blocklength: Option<usize>,
    /// Use the outage probability instead of the finite-blocklength error probability.
    #[arg(long)]
    pub outage_approx: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn sweep_command(args: &SweepArgs) -> Result<i32> {
    let mut spec = args.point.spec()?;
    if let Some(param) = args.sweep {
        spec.sweep = Some(SweepSection {
            parameter: param,
            values: args.values.clone(),
            start: None,
            stop: None,
            step: None,
        });
    } else if let (Some(values), Some(sweep)) = (&args.values, spec.sweep.as_mut()) {
        *sweep = SweepSection {
            parameter: sweep.parameter,
            values: Some(values.clone()),
            start: None,
            stop: None,
            step: None,
        };
    }
    if let Some(m) = &args.metrics {
        spec.metrics = m.clone();
    }
    let rows = run_sweep(&spec)?;
    let bytes = match spec.output.format {
        Format::Csv => sweep_rows_to_csv(&rows)?,
        Format::Json => to_json(&rows)?,
    };
    emit(spec.output.path.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}

fn validate_command(args: &ValidateArgs) -> Result<i32> {
    let report = run_validation(args.suite, args.seed, args.trials)?;
    let bytes = match args.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(["check", "pass", "reference", "observed", "error", "tolerance"]).map_err(csv_err)?;
            for c in &report.identities {
                w.write_record([c.name.clone(), c.pass.to_string(), String::new(), String::new(), fmt_f64(c.max_error), fmt_f64(c.tolerance)])
                    .map_err(csv_err)?;
            }
            for c in &report.comparisons {
                w.write_record([
                    c.metric.clone(),
                    c.pass.to_string(),
                    fmt_f64(c.analytic),
                    fmt_f64(c.empirical),
                    fmt_f64((c.analytic - c.empirical).abs()),
                    fmt_f64(c.confidence_sigmas * c.standard_error),
                ])
                .map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?
        }
    };
    emit(args.out.as_deref(), &bytes)?;
    for c in report.identities.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: max error {:e} > {:e}", c.name, c.max_error, c.tolerance);
    }
    for c in report.comparisons.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: {:.2} standard errors", c.metric, c.z_score());
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
}

/// The operating point of a non-sweep verb: the config's system section, or
/// the first grid point of a preset.
fn single_point(spec: &SweepSpec) -> Result<GridPoint> {
    let s = &spec.system;
    let mut p = GridPoint {
        swept: SweptParameter::PDb,
        swept_value: s.snr_db,
        n: s.n,
        m: s.m,
        snr_db: s.snr_db,
        rate: s.rate,
        blocklength: s.blocklength,
        system: s.clone(),
    };
    if let Some(&n) = spec.series.n.first() {
        p.n = n;
    }
    p.config()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RateDesignRow {
    stream: usize,
    epsilon: f64,
    rate_star: f64,
    outage_at_rate_star: f64,
}

fn rate_design_command(args: &PointArgs) -> Result<i32> {
    let spec = args.spec()?;
    let point = single_point(&spec)?;
    let cfg = point.config()?;
    let stats = derive_stats(&cfg)?;
    let eps = spec.system.epsilon;
    let rows = (0..cfg.n_streams)
        .map(|i| {
            let r = design_rate(&cfg, &stats, i, eps)?;
            Ok(RateDesignRow {
                stream: i + 1,
                epsilon: eps,
                rate_star: r,
                outage_at_rate_star: outage_cdf(&cfg, &stats, i, rate_to_threshold(r))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = match spec.output.format {
        Format::Json => to_json(&rows)?,
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(["stream", "epsilon", "rate_star", "outage_at_rate_star"]).map_err(csv_err)?;
            for r in &rows {
                w.write_record([r.stream.to_string(), fmt_f64(r.epsilon), fmt_f64(r.rate_star), fmt_f64(r.outage_at_rate_star)])
                    .map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?
        }
    };
    emit(spec.output.path.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}

/// One line of the `mstar` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MstarRow {
    pub n: usize,
    pub p_linear: f64,
    pub rate: f64,
    pub blocklength: usize,
    pub m_star: usize,
    pub exhaustive_argmax: usize,
    pub m_star_lb: usize,
    pub goodput_at_m_star: f64,
}

/// `M*` (descending scan), the exhaustive argmax and `min{⌊J⌋, N}` for `N`
/// identical candidate streams.
pub fn mstar_rows(points: &[GridPoint], use_outage_approx: bool) -> Result<Vec<MstarRow>> {
    points
        .par_iter()
        .map(|p| {
            let cfg = p.config()?;
            let fam = p.family(&cfg)?;
            let choice = optimize_streams(&fam, use_outage_approx)?;
            Ok(MstarRow {
                n: p.n,
                p_linear: p.power(),
                rate: p.rate,
                blocklength: p.blocklength,
                m_star: choice.m_star,
                exhaustive_argmax: choice.exhaustive_argmax,
                m_star_lb: m_star_lower_bound(&cfg, p.rate)?,
                goodput_at_m_star: choice.goodputs[choice.m_star - 1],
            })
        })
        .collect()
}

fn mstar_command(args: &MstarArgs) -> Result<i32> {
    let spec = args.point.spec()?;
    let base = single_point(&spec)?;
    let rates = if spec.series.rate.is_empty() { vec![base.rate] } else { spec.series.rate.clone() };
    let mut ls = vec![base.blocklength];
    if let Some(l) = args.compare_blocklength {
        ls.push(l);
    }
    let mut points = Vec::new();
    for &rate in &rates {
        for &l in &ls {
            let mut p = base.clone();
            p.m = 1;
            p.rate = rate;
            p.blocklength = l;
            p.system.sigma_h_sq.truncate(1);
            p.config()?;
            points.push(p);
        }
    }
    let rows = mstar_rows(&points, args.outage_approx)?;
    let bytes = match spec.output.format {
        Format::Json => to_json(&rows)?,
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(["n", "p_linear", "rate", "blocklength", "m_star", "exhaustive_argmax", "m_star_lb", "goodput_at_m_star"])
                .map_err(csv_err)?;
            for r in &rows {
                w.write_record([
                    r.n.to_string(),
                    fmt_f64(r.p_linear),
                    fmt_f64(r.rate),
                    r.blocklength.to_string(),
                    r.m_star.to_string(),
                    r.exhaustive_argmax.to_string(),
                    r.m_star_lb.to_string(),
                    fmt_f64(r.goodput_at_m_star),
                ])
                .map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?
        }
    };
    emit(spec.output.path.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct Info {
    name: &'static str,
    version: &'static str,
    rng: &'static str,
    rate_unit: &'static str,
    error_prob_outer_nodes: usize,
    mixing_check_nodes: usize,
    presets: BTreeMap<&'static str, SweepSpec>,
}

fn info_command(args: &InfoArgs) -> Result<i32> {
    let info = Info {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        rng: "chacha8, one stream per trial",
        rate_unit: "nats per channel use",
        error_prob_outer_nodes: 64,
        mixing_check_nodes: 128,
        presets: BTreeMap::from([("fig1", SweepSpec::preset(Preset::Fig1)), ("fig2", SweepSpec::preset(Preset::Fig2))]),
    };
    let bytes = match args.format {
        Format::Json => to_json(&info)?,
        Format::Csv => {
            let mut text = String::from("key,value\n");
            for (k, v) in [
                ("name", info.name.to_string()),
                ("version", info.version.to_string()),
                ("rng", info.rng.to_string()),
                ("rate_unit", info.rate_unit.to_string()),
                ("error_prob_outer_nodes", info.error_prob_outer_nodes.to_string()),
                ("mixing_check_nodes", info.mixing_check_nodes.to_string()),
            ] {
                text.push_str(&format!("{k},{v}\n"));
            }
            text.into_bytes()
        }
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}

/// Exit code for an error: bad input is a usage error, I/O is I/O, anything
/// the numerics reject is a validation failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Domain(_) | Error::Contract(_) | Error::Shape(_) => EXIT_USAGE,
        Error::Numerical(_) | Error::Convergence(_) | Error::Bracket { .. } => EXIT_VALIDATION,
    }
}

/// Parses `args` (program name first) and runs the verb; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Sweep(a) => sweep_command(a),
        Command::Validate(a) => validate_command(a),
        Command::RateDesign(a) => rate_design_command(a),
        Command::Mstar(a) => mstar_command(a),
        Command::Info(a) => info_command(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        SweepSpec::preset(Preset::Fig1).validate().unwrap();
        SweepSpec::preset(Preset::Fig2).validate().unwrap();
        let p = &SweepSpec::preset(Preset::Fig2).points().unwrap()[0];
        assert!((10.0 * p.power().log10() - 9.464).abs() < 1e-3);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        for preset in [Preset::Fig1, Preset::Fig2] {
            let spec = SweepSpec::preset(preset);
            let back = SweepSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
            assert_eq!(spec, back);
            assert_eq!(spec.points().unwrap(), back.points().unwrap());
        }
    }

    #[test]
    fn grid_generation() {
        let s = SweepSection {
            parameter: SweptParameter::PDb,
            values: None,
            start: Some(0.0),
            stop: Some(1.0),
            step: Some(0.1),
        };
        let g = s.grid().unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.30000000000000004);
        let bad = SweepSection {
            parameter: SweptParameter::M,
            values: Some(vec![1.5]),
            start: None,
            stop: None,
            step: None,
        };
        assert!(bad.grid().is_err());
        let both = SweepSection { values: Some(vec![1.0]), ..s };
        assert!(both.grid().is_err());
    }

    #[test]
    fn empty_metrics_rejected() {
        let mut spec = SweepSpec::preset(Preset::Fig1);
        spec.metrics.clear();
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn db_conversion() {
        assert_eq!(db_to_linear(10.0), 10.0);
        assert_eq!(db_to_linear(20.0), 100.0);
        assert_eq!(db_to_linear(0.0), 1.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(SweepSpec::from_toml("[system]\nbogus = 1\n").is_err());
    }
}
