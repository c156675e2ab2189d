//! System model: configuration, per-stream statistics, LS channel estimation
//! and the post-ZF SNR of each stream.
//!
//! Stream indices are zero-based throughout the library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr_decompose, sample_complex_gaussian, Complex64, ComplexMatrix, RngHandle};

/// Shortest data phase for which the normal approximation of the error
/// probability is trusted.
pub const MIN_BLOCKLENGTH: usize = 100;

/// Full parameter set of one frame-based link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Receive antennas `N`.
    pub n_rx: usize,
    /// Simultaneous single-antenna transmitters `M`.
    pub n_streams: usize,
    /// Linear input SNR `p` (noise has unit variance).
    pub power: f64,
    /// Large-scale fading `σ²_h` of every stream.
    pub sigma_h_sq: Vec<f64>,
    /// Training channel uses `m_T`.
    pub pilot_len: usize,
    /// Data channel uses `L`.
    pub data_len: usize,
    /// Accept `L < 100`.
    #[serde(default)]
    pub allow_short_blocklength: bool,
}

impl SystemConfig {
    /// Configuration with the minimum training length `m_T = M`.
    pub fn new(n_rx: usize, n_streams: usize, power: f64, sigma_h_sq: Vec<f64>, data_len: usize) -> Result<Self> {
        let cfg = Self {
            n_rx,
            n_streams,
            power,
            sigma_h_sq,
            pilot_len: n_streams,
            data_len,
            allow_short_blocklength: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every stream shares the same large-scale fading.
    pub fn identical(n_rx: usize, n_streams: usize, power: f64, sigma_h_sq: f64, data_len: usize) -> Result<Self> {
        Self::new(n_rx, n_streams, power, vec![sigma_h_sq; n_streams], data_len)
    }

    pub fn with_pilot_len(mut self, pilot_len: usize) -> Result<Self> {
        self.pilot_len = pilot_len;
        self.validate()?;
        Ok(self)
    }

    pub fn with_short_blocklength(mut self, data_len: usize) -> Result<Self> {
        self.allow_short_blocklength = true;
        self.data_len = data_len;
        self.validate()?;
        Ok(self)
    }

    /// `L_T = m_T + L`.
    pub fn frame_len(&self) -> usize {
        self.pilot_len + self.data_len
    }

    /// Shape `N - M + 1` of the Gamma law of `|r̂_ii|²`.
    pub fn diversity(&self) -> usize {
        self.n_rx - self.n_streams + 1
    }

    pub fn has_identical_statistics(&self) -> bool {
        self.sigma_h_sq.windows(2).all(|w| w[0] == w[1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.n_streams == 0 {
            return bad("n_streams", "at least one stream is required".into());
        }
        if self.n_rx < self.n_streams {
            return bad("n_rx", format!("need N >= M, got N={} M={}", self.n_rx, self.n_streams));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return bad("power", format!("must be positive and finite, got {}", self.power));
        }
        if self.sigma_h_sq.len() != self.n_streams {
            return bad(
                "sigma_h_sq",
                format!("{} values for {} streams", self.sigma_h_sq.len(), self.n_streams),
            );
        }
        if let Some(v) = self.sigma_h_sq.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return bad("sigma_h_sq", format!("must be positive and finite, got {v}"));
        }
        if self.pilot_len < self.n_streams {
            return bad(
                "pilot_len",
                format!("orthogonal pilots need m_T >= M, got m_T={} M={}", self.pilot_len, self.n_streams),
            );
        }
        if self.data_len < MIN_BLOCKLENGTH && !self.allow_short_blocklength {
            return bad(
                "data_len",
                format!("L={} is below {MIN_BLOCKLENGTH}; set allow_short_blocklength to override", self.data_len),
            );
        }
        Ok(())
    }

    pub(crate) fn check_stream(&self, i: usize) -> Result<()> {
        if i >= self.n_streams {
            return Err(Error::Domain(format!(
                "stream index {i} out of range for {} streams",
                self.n_streams
            )));
        }
        Ok(())
    }
}

/// Derived per-stream second-order statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamStats {
    /// LS estimation error variance `σ²_e = M/(m_T p)`.
    pub sigma_e_sq: f64,
    /// `σ²_ĥ = σ²_h + σ²_e`.
    pub sigma_hhat_sq: Vec<f64>,
    /// Residual variance of the equivalent model, `σ²_h σ²_e / σ²_ĥ`.
    pub sigma_z_sq: Vec<f64>,
    /// Non-centrality scale `μ = p (σ²_h/σ²_ĥ)²`.
    pub mu: Vec<f64>,
    /// Per-dimension variance `σ² = p σ²_Z / 2`.
    pub sigma_dof_sq: Vec<f64>,
}

impl StreamStats {
    /// `σ²_h / σ²_ĥ`, the weight applied to `Ĥ` in the equivalent model.
    pub fn shrinkage(&self, cfg: &SystemConfig, i: usize) -> f64 {
        cfg.sigma_h_sq[i] / self.sigma_hhat_sq[i]
    }
}

pub fn derive_stats(cfg: &SystemConfig) -> Result<StreamStats> {
    cfg.validate()?;
    let p = cfg.power;
    let sigma_e_sq = cfg.n_streams as f64 / (cfg.pilot_len as f64 * p);
    let sigma_hhat_sq: Vec<f64> = cfg.sigma_h_sq.iter().map(|&h| h + sigma_e_sq).collect();
    let sigma_z_sq: Vec<f64> = cfg
        .sigma_h_sq
        .iter()
        .zip(&sigma_hhat_sq)
        .map(|(&h, &hh)| h * sigma_e_sq / hh)
        .collect();
    let mu = cfg
        .sigma_h_sq
        .iter()
        .zip(&sigma_hhat_sq)
        .map(|(&h, &hh)| p * (h / hh).powi(2))
        .collect();
    let sigma_dof_sq = sigma_z_sq.iter().map(|&z| 0.5 * p * z).collect();
    Ok(StreamStats {
        sigma_e_sq,
        sigma_hhat_sq,
        sigma_z_sq,
        mu,
        sigma_dof_sq,
    })
}

/// One simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// True channel `H` (N × M).
    pub h: ComplexMatrix,
    /// LS estimate `Ĥ`.
    pub h_hat: ComplexMatrix,
    /// Estimation error `E = Ĥ - H`.
    pub err: ComplexMatrix,
    /// Equivalent-model residual `Z = H - Ĥ Σ²_h (Σ²_ĥ)^{-1}`.
    pub z: ComplexMatrix,
    /// Post-ZF SNR `γ_i` of every stream.
    pub snr_per_stream: Vec<f64>,
}

struct Estimate {
    h: ComplexMatrix,
    h_hat: ComplexMatrix,
    z: ComplexMatrix,
    shrink: Vec<f64>,
}

/// Training phase: draw `H`, send the pilots, and form the LS estimate.
///
/// The pilot matrix is `Ψ = sqrt(m_T/M) [I_M | 0]`, which satisfies
/// `Ψ Ψ^H = (m_T/M) I_M` and gives the error variance `M/(m_T p)`.
fn train(cfg: &SystemConfig, rng: &mut RngHandle) -> Result<Estimate> {
    let (n, m, mt) = (cfg.n_rx, cfg.n_streams, cfg.pilot_len);
    let sqrt_p = cfg.power.sqrt();
    let h = sample_complex_gaussian(rng, n, m, &cfg.sigma_h_sq)?;
    let noise = sample_complex_gaussian(rng, n, mt, &vec![1.0; mt])?;

    let gain = (mt as f64 / m as f64).sqrt();
    let psi = ComplexMatrix::from_fn(m, mt, |i, t| {
        if i == t {
            Complex64::new(gain, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })?;
    let y = h.matmul(&psi)?.scale(Complex64::new(sqrt_p, 0.0)).add(&noise)?;
    // (Ψ Ψ^H)^{-1} = (M/m_T) I
    let h_hat = y
        .matmul(&psi.adjoint())?
        .scale(Complex64::new(m as f64 / (mt as f64 * sqrt_p), 0.0));

    let shrink: Vec<f64> = cfg
        .sigma_h_sq
        .iter()
        .map(|&s| s / (s + m as f64 / (mt as f64 * cfg.power)))
        .collect();
    let z = h.sub(&h_hat.scale_columns(&shrink)?)?;
    Ok(Estimate { h, h_hat, z, shrink })
}

/// `γ_i = p |r̂ σ²_h/σ²_ĥ + (Q̂^H Z)|²` read at the last diagonal position after
/// moving column `i` of `Ĥ` to the end, so every stream is detected with all
/// other streams nulled.
fn stream_snr(est: &Estimate, power: f64, i: usize) -> Result<f64> {
    let m = est.h_hat.cols();
    let order: Vec<usize> = (0..m).filter(|&j| j != i).chain(std::iter::once(i)).collect();
    let qr = qr_decompose(&est.h_hat.permute_columns(&order)?)?;
    let last = m - 1;
    let r_last = qr.r[(last, last)].re;
    let projected: Complex64 = (0..est.z.rows()).map(|row| qr.q[(row, last)].conj() * est.z[(row, i)]).sum();
    let t = Complex64::new(r_last * est.shrink[i], 0.0) + projected;
    Ok(power * t.norm_sqr())
}

/// Simulates one frame: training, LS estimation and the post-ZF SNR of every stream.
pub fn simulate_frame(cfg: &SystemConfig, rng: &mut RngHandle) -> Result<ChannelRealization> {
    cfg.validate()?;
    let est = train(cfg, rng)?;
    let snr_per_stream = (0..cfg.n_streams)
        .map(|i| stream_snr(&est, cfg.power, i))
        .collect::<Result<Vec<_>>>()?;
    let err = est.h_hat.sub(&est.h)?;
    Ok(ChannelRealization {
        h: est.h,
        h_hat: est.h_hat,
        err,
        z: est.z,
        snr_per_stream,
    })
}

/// Same draws as [`simulate_frame`], but only evaluates stream `i`.
pub fn simulate_stream_snr(cfg: &SystemConfig, rng: &mut RngHandle, i: usize) -> Result<f64> {
    cfg.check_stream(i)?;
    let est = train(cfg, rng)?;
    stream_snr(&est, cfg.power, i)
}

/// Squared last diagonal entry `|r̂_MM|²` of the QR of `Ĥ` with stream `i` moved last.
pub fn last_diagonal_power(h_hat: &ComplexMatrix, i: usize) -> Result<f64> {
    let m = h_hat.cols();
    let order: Vec<usize> = (0..m).filter(|&j| j != i).chain(std::iter::once(i)).collect();
    let qr = qr_decompose(&h_hat.permute_columns(&order)?)?;
    Ok(qr.r[(m - 1, m - 1)].re.powi(2))
}
