//! Matching functionals over the relaxed assignment polytope.
//!
//! Pairwise sums run over ordered pairs, so every undirected edge counts
//! twice. With `V = PY - R` this makes the node-shifting term
//! `sum_(a,b) S_ab |V_a - V_b|^2 = 2 Tr(V^T L V)`.
//!
//! * Edge discrepancy: `<C, P> + lambda * sum_(a,b) S_ab (|X_a - X_b| - |Xbar_a - Xbar_b|)^2`
//!   with `Xbar = PY`. Its gradient is `C + 4 lambda (L - L*) Xbar Y^T`
//!   where `L*` is the Laplacian of `S*_ab = S_ab |X_a - X_b| / (|Xbar_a - Xbar_b| + eps)`.
//! * Node shifting: `<D, P> + lambda1 |P|_1 + lambda2 sum_(a,b) S_ab |V_a - V_b|^2`
//!   with reference `R = Xbar` (fixed transformed nodes) or `R = X`.
//!   Gradient `D + lambda1 + 4 lambda2 L V Y^T`.

use nalgebra::DMatrix;

use crate::assignment::SoftAssignment;
use crate::error::{Error, Result};
use crate::fw::Objective;
use crate::geometry::{point_distance, EdgeWeights, GraphInstance, PointSet};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Objective value with its gradient with respect to `P`.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DMatrix<f64>,
}

impl ObjectiveEval {
    fn checked(self, what: &str) -> Result<Self> {
        if !self.value.is_finite() || self.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(what));
        }
        Ok(self)
    }
}

/// Nonnegative `m x n` node-disagreement matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryCost {
    c: DMatrix<f64>,
}

impl UnaryCost {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if let Some(k) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("unary cost entry {k}")));
        }
        if c.iter().any(|&v| v < 0.0) {
            return Err(Error::DegenerateInput("negative unary cost".into()));
        }
        Ok(UnaryCost { c })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        UnaryCost {
            c: DMatrix::zeros(m, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn cols(&self) -> usize {
        self.c.ncols()
    }
}

/// `D[i][j] = |Xbar_i - Y_j|`.
pub fn distance_matrix(xbar: &PointSet, y: &PointSet) -> Result<UnaryCost> {
    if xbar.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}-d and {}-d point sets",
            xbar.dim(),
            y.dim()
        )));
    }
    let (a, b) = (xbar.coords(), y.coords());
    Ok(UnaryCost {
        c: DMatrix::from_fn(xbar.len(), y.len(), |i, j| point_distance(a, i, b, j)),
    })
}

fn check_shapes(p: &DMatrix<f64>, m: usize, y: &PointSet, c: &UnaryCost, d: usize) -> Result<()> {
    if p.nrows() != m || p.ncols() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "P is {}x{}, expected {m}x{}",
            p.nrows(),
            p.ncols(),
            y.len()
        )));
    }
    if c.rows() != m || c.cols() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "unary cost is {}x{}, expected {m}x{}",
            c.rows(),
            c.cols(),
            y.len()
        )));
    }
    if y.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "target set is {}-d, source is {d}-d",
            y.dim()
        )));
    }
    Ok(())
}

fn weighted_edges(s: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let m = s.nrows();
    let mut out = Vec::new();
    for b in 0..m {
        for a in 0..b {
            let w = s[(a, b)];
            if w > 0.0 {
                out.push((a, b, w));
            }
        }
    }
    out
}

/// Edge-length discrepancy between a source graph and its transform `PY`,
/// plus a linear unary term.
#[derive(Clone, Debug)]
pub struct EdgeDiscrepancy {
    // (a, b, S_ab, |X_a - X_b|) for a < b
    edges: Vec<(usize, usize, f64, f64)>,
    m: usize,
    dim: usize,
    y: PointSet,
    unary: UnaryCost,
    lambda: f64,
    epsilon: f64,
}

impl EdgeDiscrepancy {
    pub fn new(
        gx: &GraphInstance,
        y: &PointSet,
        unary: UnaryCost,
        lambda: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let m = gx.points.len();
        let dim = gx.points.dim();
        check_shapes(&DMatrix::zeros(m, y.len()), m, y, &unary, dim)?;
        let edges = weighted_edges(gx.weights.matrix())
            .into_iter()
            .map(|(a, b, s)| (a, b, s, gx.points.distance(a, b)))
            .collect();
        Ok(EdgeDiscrepancy {
            edges,
            m,
            dim,
            y: y.clone(),
            unary,
            lambda,
            epsilon,
        })
    }

    fn pairwise(&self, xbar: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for &(a, b, s, len) in &self.edges {
            let t = len - point_distance(xbar, a, xbar, b);
            total += s * t * t;
        }
        2.0 * total
    }
}

impl Objective for EdgeDiscrepancy {
    fn evaluate(&self, p: &DMatrix<f64>) -> Result<ObjectiveEval> {
        check_shapes(p, self.m, &self.y, &self.unary, self.dim)?;
        let xbar = p * self.y.coords();
        let mut g_xbar = DMatrix::<f64>::zeros(self.m, self.dim);
        let mut pair = 0.0;
        let mut diff = vec![0.0; self.dim];
        for &(a, b, s, len) in &self.edges {
            let mut b2 = 0.0;
            for k in 0..self.dim {
                diff[k] = xbar[(a, k)] - xbar[(b, k)];
                b2 += diff[k] * diff[k];
            }
            let blen = b2.sqrt();
            let t = len - blen;
            pair += s * t * t;
            let w = 4.0 * s * (1.0 - len / (blen + self.epsilon));
            for k in 0..self.dim {
                g_xbar[(a, k)] += w * diff[k];
                g_xbar[(b, k)] -= w * diff[k];
            }
        }
        let value = self.unary.matrix().dot(p) + self.lambda * 2.0 * pair;
        let gradient = self.unary.matrix() + (g_xbar * self.y.coords().transpose()) * self.lambda;
        ObjectiveEval { value, gradient }.checked("edge-discrepancy objective")
    }

    fn value(&self, p: &DMatrix<f64>) -> Result<f64> {
        check_shapes(p, self.m, &self.y, &self.unary, self.dim)?;
        let xbar = p * self.y.coords();
        let v = self.unary.matrix().dot(p) + self.lambda * self.pairwise(&xbar);
        if !v.is_finite() {
            return Err(Error::numeric("edge-discrepancy objective"));
        }
        Ok(v)
    }
}

/// Node-shifting functional: penalizes differences between the shift
/// vectors `(PY)_a - R_a` of adjacent nodes, plus a linear unary term and
/// an l1 term that is constant (`lambda1 * m`) on the polytope.
#[derive(Clone, Debug)]
pub struct NodeShifting {
    edges: Vec<(usize, usize, f64)>,
    reference: DMatrix<f64>,
    y: PointSet,
    unary: UnaryCost,
    lambda1: f64,
    lambda2: f64,
}

impl NodeShifting {
    pub fn new(
        reference: &PointSet,
        y: &PointSet,
        weights: &EdgeWeights,
        unary: UnaryCost,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        let m = reference.len();
        if weights.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} weight rows for {m} reference points",
                weights.len()
            )));
        }
        check_shapes(&DMatrix::zeros(m, y.len()), m, y, &unary, reference.dim())?;
        Ok(NodeShifting {
            edges: weighted_edges(weights.matrix()),
            reference: reference.coords().clone(),
            y: y.clone(),
            unary,
            lambda1,
            lambda2,
        })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    fn shifts(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.reference.nrows();
        check_shapes(p, m, &self.y, &self.unary, self.reference.ncols())?;
        Ok(p * self.y.coords() - &self.reference)
    }

    fn pairwise(&self, v: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for &(a, b, w) in &self.edges {
            total += w * point_distance(v, a, v, b).powi(2);
        }
        2.0 * total
    }

    /// Full value including the l1 term.
    pub fn full(&self, p: &DMatrix<f64>) -> Result<ObjectiveEval> {
        let mut e = self.evaluate(p)?;
        e.value += self.lambda1 * p.sum();
        e.gradient.add_scalar_mut(self.lambda1);
        e.checked("node-shifting objective")
    }
}

impl Objective for NodeShifting {
    fn evaluate(&self, p: &DMatrix<f64>) -> Result<ObjectiveEval> {
        let v = self.shifts(p)?;
        let dim = v.ncols();
        let mut g_v = DMatrix::<f64>::zeros(v.nrows(), dim);
        let mut total = 0.0;
        for &(a, b, w) in &self.edges {
            for k in 0..dim {
                let t = v[(a, k)] - v[(b, k)];
                total += w * t * t;
                g_v[(a, k)] += 4.0 * self.lambda2 * w * t;
                g_v[(b, k)] -= 4.0 * self.lambda2 * w * t;
            }
        }
        let value = self.unary.matrix().dot(p) + self.lambda2 * 2.0 * total;
        let gradient = self.unary.matrix() + g_v * self.y.coords().transpose();
        ObjectiveEval { value, gradient }.checked("node-shifting objective")
    }

    fn value(&self, p: &DMatrix<f64>) -> Result<f64> {
        let v = self.shifts(p)?;
        let out = self.unary.matrix().dot(p) + self.lambda2 * self.pairwise(&v);
        if !out.is_finite() {
            return Err(Error::numeric("node-shifting objective"));
        }
        Ok(out)
    }

    fn polytope_constant(&self, rows: usize) -> f64 {
        self.lambda1 * rows as f64
    }
}

/// Edge discrepancy of `gx` against `PY` with unary term `unary`.
pub fn eval_f(
    p: &SoftAssignment,
    gx: &GraphInstance,
    y: &PointSet,
    unary: &UnaryCost,
    lambda: f64,
    epsilon: f64,
) -> Result<ObjectiveEval> {
    EdgeDiscrepancy::new(gx, y, unary.clone(), lambda, epsilon)?.evaluate(p.matrix())
}

/// Node shifting of `PY` relative to the fixed transformed nodes `xbar`,
/// over the edge weights `sbar`.
pub fn eval_g_bar(
    p: &SoftAssignment,
    xbar: &PointSet,
    y: &PointSet,
    sbar: &EdgeWeights,
    d: &UnaryCost,
    lambda1: f64,
    lambda2: f64,
) -> Result<ObjectiveEval> {
    NodeShifting::new(xbar, y, sbar, d.clone(), lambda1, lambda2)?.full(p.matrix())
}

/// Node shifting of `PY` relative to the source nodes themselves, over the
/// source graph's weights.
pub fn eval_g_xy(
    p: &SoftAssignment,
    gx: &GraphInstance,
    y: &PointSet,
    d: &UnaryCost,
    lambda1: f64,
    lambda2: f64,
) -> Result<ObjectiveEval> {
    NodeShifting::new(&gx.points, y, &gx.weights, d.clone(), lambda1, lambda2)?.full(p.matrix())
}
