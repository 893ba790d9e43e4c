//! Soft (relaxed) and hard assignments between a source and target graph.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROW_SUM_TOL: f64 = 1e-9;
pub const COL_SUM_TOL: f64 = 1e-9;

/// An `m x n` matrix in the relaxed assignment polytope: entries in `[0, 1]`,
/// rows summing to one and columns summing to at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    p: DMatrix<f64>,
}

/// How far a matrix is from the relaxed assignment polytope.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub min_entry: f64,
    pub max_entry: f64,
    pub max_row_error: f64,
    pub max_col_sum: f64,
}

impl Feasibility {
    pub fn of(p: &DMatrix<f64>) -> Self {
        let mut f = Feasibility {
            min_entry: f64::INFINITY,
            max_entry: f64::NEG_INFINITY,
            max_row_error: 0.0,
            max_col_sum: 0.0,
        };
        let mut rows = vec![0.0; p.nrows()];
        for col in p.column_iter() {
            let mut cs = 0.0;
            for (i, &v) in col.iter().enumerate() {
                f.min_entry = f.min_entry.min(v);
                f.max_entry = f.max_entry.max(v);
                rows[i] += v;
                cs += v;
            }
            f.max_col_sum = f.max_col_sum.max(cs);
        }
        f.max_row_error = rows.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        f
    }

    pub fn is_feasible(&self) -> bool {
        self.min_entry >= 0.0
            && self.max_entry <= 1.0 + COL_SUM_TOL
            && self.max_row_error <= ROW_SUM_TOL
            && self.max_col_sum <= 1.0 + COL_SUM_TOL
    }
}

impl SoftAssignment {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() > p.ncols() {
            return Err(Error::Shape(format!(
                "assignment must have m <= n, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("assignment matrix"));
        }
        let f = Feasibility::of(&p);
        if !f.is_feasible() {
            return Err(Error::DegenerateInput(format!(
                "matrix outside the assignment polytope: {f:?}"
            )));
        }
        Ok(SoftAssignment { p })
    }

    /// Wraps a matrix produced by convex combination of feasible points.
    pub(crate) fn from_combination(p: DMatrix<f64>) -> Self {
        debug_assert!(
            Feasibility::of(&p).is_feasible(),
            "iterate left the polytope: {:?}",
            Feasibility::of(&p)
        );
        SoftAssignment { p }
    }

    /// The barycenter `P_ij = 1/n`.
    pub fn uniform(m: usize, n: usize) -> Self {
        assert!(m <= n && n > 0);
        SoftAssignment {
            p: DMatrix::from_element(m, n, 1.0 / n as f64),
        }
    }

    pub fn from_matching(matching: &Matching) -> Self {
        let mut p = DMatrix::zeros(matching.len(), matching.targets());
        for (i, &j) in matching.assignment().iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        SoftAssignment { p }
    }

    pub fn rows(&self) -> usize {
        self.p.nrows()
    }

    pub fn cols(&self) -> usize {
        self.p.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.p
    }

    pub fn feasibility(&self) -> Feasibility {
        Feasibility::of(&self.p)
    }
}

/// Fraction of rows of `p` holding an entry of at least `r`. For
/// `r > 0.5` at most one entry per row can qualify.
pub fn sparsity_index(p: &SoftAssignment, r: f64) -> f64 {
    let m = p.rows();
    if m == 0 {
        return 0.0;
    }
    let hits = p.p.row_iter().filter(|row| row.iter().any(|&v| v >= r)).count();
    hits as f64 / m as f64
}

/// Injective map from `m` source nodes into `n` target nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matching {
    assignment: Vec<usize>,
    targets: usize,
}

impl Matching {
    pub fn new(assignment: Vec<usize>, targets: usize) -> Result<Self> {
        let mut seen = vec![false; targets];
        for (i, &j) in assignment.iter().enumerate() {
            if j >= targets {
                return Err(Error::Shape(format!(
                    "source {i} mapped to {j}, but only {targets} targets exist"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::DegenerateInput(format!(
                    "target {j} assigned twice (matching must be injective)"
                )));
            }
        }
        Ok(Matching {
            assignment,
            targets,
        })
    }

    pub fn identity(m: usize) -> Self {
        Matching {
            assignment: (0..m).collect(),
            targets: m,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn target(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Re-express targets through `index_map` (e.g. reduced-to-original
    /// target indices) into a target space of size `targets`.
    pub fn remap(&self, index_map: &[usize], targets: usize) -> Result<Matching> {
        if index_map.len() != self.targets {
            return Err(Error::DimensionMismatch(format!(
                "index map has {} entries, matching has {} targets",
                index_map.len(),
                self.targets
            )));
        }
        Matching::new(
            self.assignment.iter().map(|&j| index_map[j]).collect(),
            targets,
        )
    }

    /// Total of `weights[(i, sigma(i))]`.
    pub fn score(&self, weights: &DMatrix<f64>) -> f64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| weights[(i, j)])
            .sum()
    }
}
