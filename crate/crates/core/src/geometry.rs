//! Point sets, edge sets, edge weights and the transformation map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::SoftAssignment;
use crate::error::{Error, Result};

/// An ordered set of `m` points in `d` dimensions, stored as an `m x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    coords: DMatrix<f64>,
}

impl PointSet {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.nrows() == 0 || coords.ncols() == 0 {
            return Err(Error::DegenerateInput(format!(
                "point set must have at least one point and one axis, got {}x{}",
                coords.nrows(),
                coords.ncols()
            )));
        }
        if let Some(k) = coords.iter().position(|v| !v.is_finite()) {
            let (i, a) = (k % coords.nrows(), k / coords.nrows());
            return Err(Error::numeric(format!("coordinate {a} of point {i}")));
        }
        Ok(PointSet { coords })
    }

    /// Build from a list of points; every point must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.as_ref().len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "point {i} has {} coordinates, expected {d}",
                rows[i].as_ref().len()
            )));
        }
        Self::new(DMatrix::from_fn(m, d, |i, a| rows[i].as_ref()[a]))
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DMatrix<f64> {
        self.coords
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Euclidean distance between points `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        point_distance(&self.coords, i, &self.coords, j)
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let d = self.dim();
        PointSet {
            coords: DMatrix::from_fn(indices.len(), d, |r, a| self.coords[(indices[r], a)]),
        }
    }
}

pub(crate) fn point_distance(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..a.ncols() {
        let t = a[(i, k)] - b[(j, k)];
        s += t * t;
    }
    s.sqrt()
}

/// Shift to the per-axis minimum and divide by the largest axis range, so
/// that every coordinate lands in `[0, 1]` with the aspect ratio preserved.
pub fn normalize_points(points: &PointSet) -> Result<PointSet> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(
            "normalization needs at least two points".into(),
        ));
    }
    let c = points.coords();
    let mins: Vec<f64> = (0..c.ncols()).map(|a| c.column(a).min()).collect();
    let scale = (0..c.ncols())
        .map(|a| c.column(a).max() - mins[a])
        .fold(0.0, f64::max);
    if scale <= 0.0 {
        return Err(Error::DegenerateInput(
            "all points are identical; normalization scale is zero".into(),
        ));
    }
    let coords = DMatrix::from_fn(c.nrows(), c.ncols(), |i, a| {
        ((c[(i, a)] - mins[a]) / scale).clamp(0.0, 1.0)
    });
    PointSet::new(coords)
}

/// Undirected edges stored as sorted `(low, high)` pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Normalizes orientation, sorts and rejects self-loops, duplicates and
    /// out-of-range indices.
    pub fn new(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::DegenerateInput(format!("self-loop at node {a}")));
            }
            if a >= nodes || b >= nodes {
                return Err(Error::Shape(format!(
                    "edge ({a}, {b}) out of range for {nodes} nodes"
                )));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        let before = out.len();
        out.dedup();
        if out.len() != before {
            return Err(Error::DegenerateInput("duplicate edge".into()));
        }
        Ok(EdgeSet { nodes, edges: out })
    }

    pub fn complete(nodes: usize) -> Self {
        let edges = (0..nodes)
            .flat_map(|a| (a + 1..nodes).map(move |b| (a, b)))
            .collect();
        EdgeSet { nodes, edges }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }
}

/// Symmetric nonnegative edge-weight matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    s: DMatrix<f64>,
}

impl EdgeWeights {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::Shape(format!(
                "edge weights must be square, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        let m = s.nrows();
        for i in 0..m {
            if s[(i, i)] != 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "nonzero diagonal weight at {i}"
                )));
            }
            for j in 0..m {
                let v = s[(i, j)];
                if !v.is_finite() {
                    return Err(Error::numeric(format!("edge weight ({i}, {j})")));
                }
                if v < 0.0 {
                    return Err(Error::DegenerateInput(format!(
                        "negative edge weight at ({i}, {j})"
                    )));
                }
                if v != s[(j, i)] {
                    return Err(Error::DegenerateInput(format!(
                        "edge weights not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(EdgeWeights { s })
    }

    /// Weight 1 on every edge of `edges`, 0 elsewhere.
    pub fn unit(edges: &EdgeSet) -> Self {
        let m = edges.nodes();
        let mut s = DMatrix::zeros(m, m);
        for &(a, b) in edges.edges() {
            s[(a, b)] = 1.0;
            s[(b, a)] = 1.0;
        }
        EdgeWeights { s }
    }

    /// Inverse Euclidean edge length on every edge of `edges`.
    pub fn inverse_length(edges: &EdgeSet, points: &PointSet) -> Result<Self> {
        let m = points.len();
        if edges.nodes() != m {
            return Err(Error::DimensionMismatch(format!(
                "edge set has {} nodes, point set has {m}",
                edges.nodes()
            )));
        }
        let mut s = DMatrix::zeros(m, m);
        for &(a, b) in edges.edges() {
            let len = points.distance(a, b);
            if len <= 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "points {a} and {b} coincide"
                )));
            }
            s[(a, b)] = 1.0 / len;
            s[(b, a)] = 1.0 / len;
        }
        Ok(EdgeWeights { s })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }
}

/// A geometric graph: node positions, edges and edge weights.
#[derive(Clone, Debug)]
pub struct GraphInstance {
    pub points: PointSet,
    pub edges: EdgeSet,
    pub weights: EdgeWeights,
}

impl GraphInstance {
    pub fn new(points: PointSet, edges: EdgeSet, weights: EdgeWeights) -> Result<Self> {
        let m = points.len();
        if edges.nodes() != m || weights.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} points, {} edge-set nodes, {} weight rows",
                edges.nodes(),
                weights.len()
            )));
        }
        let s = weights.matrix();
        for i in 0..m {
            for j in i + 1..m {
                if s[(i, j)] > 0.0 && !edges.contains(i, j) {
                    return Err(Error::DegenerateInput(format!(
                        "weight on ({i}, {j}) which is not an edge"
                    )));
                }
            }
        }
        Ok(GraphInstance {
            points,
            edges,
            weights,
        })
    }

    /// Graph over `points` and `edges` weighted by inverse edge length.
    pub fn with_inverse_length(points: PointSet, edges: EdgeSet) -> Result<Self> {
        let weights = EdgeWeights::inverse_length(&edges, &points)?;
        Ok(GraphInstance {
            points,
            edges,
            weights,
        })
    }
}

/// Fully connected graph with `S[a][b] = 1 / |X_a - X_b|`.
pub fn complete_graph(points: &PointSet) -> Result<GraphInstance> {
    GraphInstance::with_inverse_length(points.clone(), EdgeSet::complete(points.len()))
}

/// `L = diag(S 1) - S`.
pub fn laplacian(weights: &EdgeWeights) -> DMatrix<f64> {
    let s = weights.matrix();
    let mut l = -s.clone();
    for i in 0..s.nrows() {
        l[(i, i)] = s.row(i).sum();
    }
    l
}

/// The transformed node set `PY`: every source node is sent to a convex
/// combination of the target nodes.
pub fn transform(p: &SoftAssignment, y: &PointSet) -> Result<PointSet> {
    if p.cols() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignment has {} columns, target set has {} points",
            p.cols(),
            y.len()
        )));
    }
    PointSet::new(p.matrix() * y.coords())
}
