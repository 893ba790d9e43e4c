//! Spectral matching: principal eigenvector of the affinity matrix,
//! discretized greedily.

use nalgebra::{DMatrix, DVector};

use crate::affinity::AffinityMatrix;
use crate::assignment::Matching;
use crate::error::{Error, Result};
use crate::lap::{for_each_injection, solve_lap, CostMatrix};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 1000;
pub const BRUTE_FORCE_QAP_MAX_M: usize = 7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Readout {
    /// Repeatedly take the largest remaining entry and clear its row and column.
    #[default]
    Greedy,
    /// Assignment maximizing the total eigenvector mass.
    Hungarian,
}

#[derive(Clone, Debug)]
pub struct SpectralResult {
    pub matching: Matching,
    /// Unit-norm, nonnegative, indexed `j * m + i`.
    pub principal_vector: DVector<f64>,
    pub eigenvalue: f64,
    pub qap_score: f64,
    pub iterations: usize,
    /// Power iteration hit the cap before the tolerance.
    pub not_converged: bool,
}

fn check(w: &AffinityMatrix, m: usize, n: usize) -> Result<()> {
    if w.sources() != m || w.targets() != n {
        return Err(Error::DimensionMismatch(format!(
            "affinity built for {}x{}, called with {m}x{n}",
            w.sources(),
            w.targets()
        )));
    }
    if m > n || m == 0 {
        return Err(Error::DegenerateInput(format!("need 0 < m <= n, got {m}x{n}")));
    }
    Ok(())
}

fn power_iteration(w: &DMatrix<f64>) -> Result<(DVector<f64>, usize, bool)> {
    let k = w.nrows();
    let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    for it in 1..=POWER_MAX_ITERS {
        let mut next = w * &v;
        let norm = next.norm();
        if !norm.is_finite() {
            return Err(Error::numeric("power iteration"));
        }
        if norm == 0.0 {
            // W = 0: every direction is an eigenvector; keep the uniform start.
            return Ok((v, it, false));
        }
        next /= norm;
        let diff = (&next - &v).norm();
        v = next;
        if diff < POWER_TOL {
            return Ok((v, it, false));
        }
    }
    Ok((v, POWER_MAX_ITERS, true))
}

fn greedy(v: &DVector<f64>, m: usize, n: usize) -> Result<Matching> {
    let mut order: Vec<usize> = (0..m * n).collect();
    // Stable sort: equal entries resolve to the lower pair index.
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    let mut assignment = vec![usize::MAX; m];
    let mut left = m;
    for idx in order {
        let (i, j) = (idx % m, idx / m);
        if row_used[i] || col_used[j] {
            continue;
        }
        row_used[i] = true;
        col_used[j] = true;
        assignment[i] = j;
        left -= 1;
        if left == 0 {
            break;
        }
    }
    Matching::new(assignment, n)
}

/// Spectral matching with the given readout.
pub fn spectral_match_with(w: &AffinityMatrix, m: usize, n: usize, readout: Readout) -> Result<SpectralResult> {
    check(w, m, n)?;
    let (v, iterations, not_converged) = power_iteration(w.matrix())?;
    let eigenvalue = v.dot(&(w.matrix() * &v));
    let matching = match readout {
        Readout::Greedy => greedy(&v, m, n)?,
        Readout::Hungarian => solve_lap(&CostMatrix::from_fn(m, n, |i, j| -v[j * m + i]))?,
    };
    let qap_score = w.score(matching.assignment());
    Ok(SpectralResult {
        matching,
        principal_vector: v,
        eigenvalue,
        qap_score,
        iterations,
        not_converged,
    })
}

/// Spectral matching with greedy discretization.
pub fn spectral_match(w: &AffinityMatrix, m: usize, n: usize) -> Result<SpectralResult> {
    spectral_match_with(w, m, n, Readout::Greedy)
}

/// Exhaustive maximum of `P_v^T W P_v` over injective assignments. Ties
/// resolve to the lexicographically first assignment.
pub fn brute_force_qap(w: &AffinityMatrix, m: usize, n: usize) -> Result<(Matching, f64)> {
    check(w, m, n)?;
    if m > BRUTE_FORCE_QAP_MAX_M {
        return Err(Error::Capacity(format!(
            "exhaustive QAP limited to m <= {BRUTE_FORCE_QAP_MAX_M}, got {m}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_injection(m, n, |sigma| {
        let s = w.score(sigma);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, sigma.to_vec()));
        }
    });
    let (score, sigma) = best.expect("m <= n admits an injection");
    Ok((Matching::new(sigma, n)?, score))
}
