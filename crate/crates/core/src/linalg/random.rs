use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ComplexMatrix;
use crate::error::{Error, Result};

/// Seeded random source with independent substreams.
///
/// The same `(seed, stream)` pair always yields the same sequence of draws.
/// Handles are single-owner; parallel work should open one substream per unit
/// of work instead of sharing a handle.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngHandle {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn algorithm(&self) -> &'static str {
        Self::ALGORITHM
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Circularly-symmetric complex Gaussian with total variance `variance`.
    pub fn complex_normal(&mut self, variance: f64) -> Complex64 {
        let s = (0.5 * variance).sqrt();
        let re = self.standard_normal();
        let im = self.standard_normal();
        Complex64::new(s * re, s * im)
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Matrix with independent zero-mean complex Gaussian entries; every entry of
/// column `j` has variance `column_variances[j]`, split equally between the
/// real and imaginary parts. Entries are drawn in row-major order.
pub fn sample_complex_gaussian(
    rng: &mut RngHandle,
    rows: usize,
    cols: usize,
    column_variances: &[f64],
) -> Result<ComplexMatrix> {
    if column_variances.len() != cols {
        return Err(Error::Shape(format!(
            "{} column variances for {cols} columns",
            column_variances.len()
        )));
    }
    if let Some(v) = column_variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("column variance must be positive, got {v}")));
    }
    ComplexMatrix::from_fn(rows, cols, |_, j| rng.complex_normal(column_variances[j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_streams() {
        let mut a = RngHandle::substream(42, 3);
        let mut b = RngHandle::substream(42, 3);
        let mut c = RngHandle::substream(42, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(a.algorithm(), "chacha8");
    }

    #[test]
    fn unit_variance_moments() {
        let mut rng = RngHandle::new(1);
        let n = 1_000_000;
        let m = sample_complex_gaussian(&mut rng, n, 1, &[1.0]).unwrap();
        let (mut sr, mut si, mut s2) = (0.0, 0.0, 0.0);
        for z in m.as_slice() {
            sr += z.re;
            si += z.im;
            s2 += z.norm_sqr();
        }
        let nf = n as f64;
        // per-component sd is sqrt(1/2); 4 standard errors
        assert!((sr / nf).abs() < 4e-3);
        assert!((si / nf).abs() < 4e-3);
        assert!((s2 / nf - 1.0).abs() < 0.01);
    }

    #[test]
    fn per_column_variances() {
        let mut rng = RngHandle::new(2);
        let n = 500_000;
        let m = sample_complex_gaussian(&mut rng, n, 2, &[0.1, 0.2]).unwrap();
        for (j, target) in [0.1, 0.2].into_iter().enumerate() {
            let v: f64 = m.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            assert!((v / target - 1.0).abs() < 0.01, "column {j}: {v}");
            let re_var: f64 = m.column(j).iter().map(|z| z.re * z.re).sum::<f64>() / n as f64;
            assert!((re_var / (0.5 * target) - 1.0).abs() < 0.015);
        }
    }

    #[test]
    fn rejects_bad_variances() {
        let mut rng = RngHandle::new(0);
        assert!(sample_complex_gaussian(&mut rng, 2, 2, &[1.0]).is_err());
        assert!(sample_complex_gaussian(&mut rng, 2, 1, &[0.0]).is_err());
        assert!(sample_complex_gaussian(&mut rng, 2, 1, &[-1.0]).is_err());
    }
}
