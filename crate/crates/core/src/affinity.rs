//! Explicit `mn x mn` affinity matrices for the quadratic-assignment baseline.
//!
//! Candidate pair `(i, j)` (source `i`, target `j`) lives at index `j * m + i`
//! (column-wise vectorization of the `m x n` assignment matrix).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// Largest `m * n` for which a dense affinity matrix is built.
pub const MAX_PAIRS: usize = 2500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AffinityKind {
    /// `exp(-(dlen)^2 / 2 - (dtheta)^2 / 2)`.
    AngleLength,
    /// `exp(-(dlen)^2 / scale)`.
    LengthOnly { scale: f64 },
}

#[derive(Clone, Debug)]
pub struct AffinityMatrix {
    w: DMatrix<f64>,
    m: usize,
    n: usize,
}

impl AffinityMatrix {
    /// Wraps an explicit matrix; it must be square of side `m * n`,
    /// symmetric, finite and nonnegative.
    pub fn new(w: DMatrix<f64>, m: usize, n: usize) -> Result<Self> {
        let k = m * n;
        if k > MAX_PAIRS {
            return Err(Error::Capacity(format!(
                "affinity matrix for {m}x{n} pairs exceeds {MAX_PAIRS}"
            )));
        }
        if w.nrows() != k || w.ncols() != k {
            return Err(Error::Shape(format!(
                "affinity must be {k}x{k}, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        for a in 0..k {
            for b in 0..k {
                let v = w[(a, b)];
                if !v.is_finite() || v < 0.0 || v != w[(b, a)] {
                    return Err(Error::DegenerateInput(format!(
                        "affinity entry ({a}, {b}) = {v} is not symmetric nonnegative"
                    )));
                }
            }
        }
        Ok(AffinityMatrix { w, m, n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn sources(&self) -> usize {
        self.m
    }

    pub fn targets(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.m + i
    }

    /// `P_v^T W P_v` for a hard assignment `sigma`.
    pub fn score(&self, sigma: &[usize]) -> f64 {
        let idx: Vec<usize> = sigma
            .iter()
            .enumerate()
            .map(|(i, &j)| self.index(i, j))
            .collect();
        let mut s = 0.0;
        for &a in &idx {
            for &b in &idx {
                s += self.w[(a, b)];
            }
        }
        s
    }
}

/// Angle of the undirected segment against the horizontal, in `(-pi/2, pi/2]`.
pub fn edge_angle(dx: f64, dy: f64) -> f64 {
    let t = dy.atan2(dx);
    if t > FRAC_PI_2 {
        t - PI
    } else if t <= -FRAC_PI_2 {
        t + PI
    } else {
        t
    }
}

/// Difference of two undirected edge angles, wrapped to the shorter arc.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Pairwise affinities between all edges of the complete graphs on `x` and
/// `y`. Conflicting pairs (same source or same target) get 0; the diagonal
/// holds `node_affinity[(i, j)]` when given, else 0.
pub fn affinity_matrix(
    x: &PointSet,
    y: &PointSet,
    kind: AffinityKind,
    node_affinity: Option<&DMatrix<f64>>,
) -> Result<AffinityMatrix> {
    let (m, n) = (x.len(), y.len());
    if m * n > MAX_PAIRS {
        return Err(Error::Capacity(format!(
            "affinity matrix for {m}x{n} pairs exceeds {MAX_PAIRS}"
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}-d and {}-d point sets",
            x.dim(),
            y.dim()
        )));
    }
    if kind == AffinityKind::AngleLength && x.dim() != 2 {
        return Err(Error::UnsupportedDimension(x.dim()));
    }
    if let AffinityKind::LengthOnly { scale } = kind {
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter(format!("affinity scale {scale}")));
        }
    }
    if let Some(u) = node_affinity {
        if u.nrows() != m || u.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "node affinity is {}x{}, expected {m}x{n}",
                u.nrows(),
                u.ncols()
            )));
        }
    }

    let edge = |p: &PointSet, a: usize, b: usize| -> (f64, f64) {
        let len = p.distance(a, b);
        let theta = if p.dim() == 2 {
            edge_angle(
                p.coords()[(b, 0)] - p.coords()[(a, 0)],
                p.coords()[(b, 1)] - p.coords()[(a, 1)],
            )
        } else {
            0.0
        };
        (len, theta)
    };
    // Undirected: evaluate once per pair so that W is exactly symmetric.
    let table = |p: &PointSet| -> Vec<Vec<(f64, f64)>> {
        let k = p.len();
        let mut t = vec![vec![(0.0, 0.0); k]; k];
        for a in 0..k {
            for b in a + 1..k {
                t[a][b] = edge(p, a, b);
                t[b][a] = t[a][b];
            }
        }
        t
    };
    let (ex, ey) = (table(x), table(y));

    let k = m * n;
    let mut w = DMatrix::zeros(k, k);
    for j1 in 0..n {
        for i1 in 0..m {
            let r = j1 * m + i1;
            if let Some(u) = node_affinity {
                w[(r, r)] = u[(i1, j1)];
            }
            for j2 in 0..n {
                if j2 == j1 {
                    continue;
                }
                for i2 in 0..m {
                    if i2 == i1 {
                        continue;
                    }
                    let (lx, tx) = ex[i1][i2];
                    let (ly, ty) = ey[j1][j2];
                    let dl = lx - ly;
                    w[(r, j2 * m + i2)] = match kind {
                        AffinityKind::AngleLength => {
                            let dt = angle_difference(tx, ty);
                            (-0.5 * dl * dl - 0.5 * dt * dt).exp()
                        }
                        AffinityKind::LengthOnly { scale } => (-dl * dl / scale).exp(),
                    };
                }
            }
        }
    }
    Ok(AffinityMatrix { w, m, n })
}
