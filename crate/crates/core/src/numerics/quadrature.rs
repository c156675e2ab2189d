use nalgebra::{DMatrix, SymmetricEigen};

use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Nodes and weights of a Gauss rule, `∫ w(t) g(t) dt ≈ Σ weights[i] g(nodes[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

pub const MIN_LAGUERRE_NODES: usize = 2;
pub const MAX_LAGUERRE_NODES: usize = 256;

/// Gauss–Laguerre rule for `∫_0^∞ e^{-t} g(t) dt`, as `(node, weight)` pairs.
pub fn gauss_laguerre_nodes(n: usize) -> Result<Vec<(f64, f64)>> {
    Ok(generalized_gauss_laguerre(n, 0.0)?.pairs().collect())
}

/// Generalized Gauss–Laguerre rule for the Gamma(α+1, 1) probability measure,
/// i.e. `∫_0^∞ t^α e^{-t} g(t) dt / Γ(α+1)`. Weights sum to one.
///
/// Built with the Golub–Welsch method: nodes are eigenvalues of the Jacobi
/// matrix of the orthonormal Laguerre recurrence, weights the squared first
/// components of its eigenvectors. Weights are then recomputed from the
/// polynomial identity to keep relative accuracy in the tail.
pub fn generalized_gauss_laguerre(n: usize, alpha: f64) -> Result<QuadratureRule> {
    if !(MIN_LAGUERRE_NODES..=MAX_LAGUERRE_NODES).contains(&n) {
        return domain(format!(
            "Gauss-Laguerre: node count {n} outside [{MIN_LAGUERRE_NODES}, {MAX_LAGUERRE_NODES}]"
        ));
    }
    if !(alpha > -1.0) || !alpha.is_finite() {
        return domain(format!("Gauss-Laguerre: alpha must exceed -1, got {alpha}"));
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let fi = i as f64;
        jacobi[(i, i)] = 2.0 * fi + alpha + 1.0;
        if i + 1 < n {
            let off = ((fi + 1.0) * (fi + 1.0 + alpha)).sqrt();
            jacobi[(i, i + 1)] = off;
            jacobi[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    // Eigenvector weights carry only absolute accuracy, which is useless for the
    // tiny weights far out in the tail. Polish each node by Newton and take the
    // weight from the Laguerre polynomial identity instead.
    let nf = n as f64;
    let ln_norm = ln_gamma(nf + alpha + 1.0) - ln_gamma(nf + 1.0) - ln_gamma(alpha + 1.0);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (_, ratio) = laguerre_pair(n, alpha, *x);
            let step = ratio * *x / (nf * ratio - (nf + alpha));
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let (ln_nm1, _) = laguerre_pair(n, alpha, *x);
        weights.push((ln_norm + x.ln() - 2.0 * (nf + alpha).ln() - 2.0 * ln_nm1).exp());
    }
    let total: f64 = weights.iter().sum();
    Ok(QuadratureRule {
        nodes,
        weights: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// `ln|L_{n-1}^α(x)|` and the ratio `L_n/L_{n-1}`, by the three-term
/// recurrence with rescaling.
fn laguerre_pair(n: usize, alpha: f64, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (1.0f64, 1.0 + alpha - x);
    let mut ln_scale = 0.0;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        if cur.abs() > 1e100 {
            prev *= 1e-100;
            cur *= 1e-100;
            ln_scale += 100.0 * std::f64::consts::LN_10;
        }
    }
    (prev.abs().ln() + ln_scale, cur / prev)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
///
/// Subdivision stops once the Richardson error estimate is below `15·eps`, or
/// below the relative round-off floor of the panel, or when `max_depth` is hit.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64, max_depth: u32) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, max_depth)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    let floor = 1e-15 * (left.abs() + right.abs());
    if depth == 0 || delta.abs() <= 15.0 * eps || delta.abs() <= floor || m <= a || m >= b {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}
