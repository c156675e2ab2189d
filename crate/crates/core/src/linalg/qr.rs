use num_complex::Complex64;

use super::ComplexMatrix;
use crate::error::{Error, Result};

/// `a = q · r` with `q` unitary (`rows × rows`) and `r` upper triangular
/// (`rows × cols`) carrying a real, non-negative diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    pub q: ComplexMatrix,
    pub r: ComplexMatrix,
}

/// Householder QR of a tall or square complex matrix.
pub fn qr_decompose(a: &ComplexMatrix) -> Result<QrFactors> {
    let (n, m) = (a.rows(), a.cols());
    if n < m {
        return Err(Error::Shape(format!("QR needs rows >= cols, got {n}x{m}")));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut r = a.clone();
    let mut q = ComplexMatrix::identity(n)?;
    let mut v = vec![zero; n];

    for k in 0..m {
        let norm = (k..n).map(|i| r[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let head = r[(k, k)];
        let phase = if head.norm() > 0.0 { head / head.norm() } else { Complex64::new(1.0, 0.0) };
        let alpha = -phase * norm;
        for i in k..n {
            v[i] = r[(i, k)];
        }
        v[k] -= alpha;
        let v_norm_sqr: f64 = (k..n).map(|i| v[i].norm_sqr()).sum();
        if v_norm_sqr == 0.0 {
            continue;
        }
        let beta = 2.0 / v_norm_sqr;

        // r <- (I - beta v v^H) r on the trailing block
        for j in k..m {
            let s: Complex64 = (k..n).map(|i| v[i].conj() * r[(i, j)]).sum();
            let s = s * beta;
            for i in k..n {
                let vi = v[i];
                r[(i, j)] -= s * vi;
            }
        }
        r[(k, k)] = alpha;
        for i in k + 1..n {
            r[(i, k)] = zero;
        }

        // q <- q (I - beta v v^H)
        for i in 0..n {
            let s: Complex64 = (k..n).map(|l| q[(i, l)] * v[l]).sum();
            let s = s * beta;
            for l in k..n {
                let vl = v[l].conj();
                q[(i, l)] -= s * vl;
            }
        }
    }

    // Fix the phase freedom: rotate so every diagonal entry of r is real and >= 0.
    for k in 0..m {
        let d = r[(k, k)];
        let mag = d.norm();
        if mag == 0.0 {
            continue;
        }
        let phase = d / mag;
        for j in k..m {
            r[(k, j)] *= phase.conj();
        }
        r[(k, k)] = Complex64::new(mag, 0.0);
        for i in 0..n {
            q[(i, k)] *= phase;
        }
    }
    Ok(QrFactors { q, r })
}
