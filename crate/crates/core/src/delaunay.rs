//! Planar Delaunay triangulation and k-means edge pruning.
//!
//! The triangulation is incremental Bowyer-Watson. Instead of a finite
//! super-triangle, the outside of the convex hull is covered by "ghost"
//! triangles that share a vertex at infinity; a ghost's circumcircle is the
//! open half-plane beyond its hull edge (plus the open edge itself). This
//! keeps every hull edge without picking a super-triangle size.
//!
//! Points are inserted in index order. A point exactly on an existing
//! circumcircle does not invalidate that triangle, so cocircular ties go to
//! the triangle built first.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::{EdgeSet, PointSet};

const GHOST: usize = usize::MAX;

type Pt = [f64; 2];

fn orient(a: Pt, b: Pt, c: Pt) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` is strictly inside the circle through the
/// counter-clockwise triangle `a, b, c`.
pub fn in_circle(a: Pt, b: Pt, c: Pt, d: Pt) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

struct Mesh<'a> {
    pts: &'a [Pt],
    tris: Vec<Option<[usize; 3]>>,
    // directed edge -> triangle holding it in its cyclic order
    edge_owner: HashMap<(usize, usize), usize>,
}

impl<'a> Mesh<'a> {
    fn add(&mut self, t: [usize; 3]) {
        let idx = self.tris.len();
        for k in 0..3 {
            self.edge_owner.insert((t[k], t[(k + 1) % 3]), idx);
        }
        self.tris.push(Some(t));
    }

    fn remove(&mut self, idx: usize) -> [usize; 3] {
        let t = self.tris[idx].take().expect("live triangle");
        for k in 0..3 {
            let e = (t[k], t[(k + 1) % 3]);
            if self.edge_owner.get(&e) == Some(&idx) {
                self.edge_owner.remove(&e);
            }
        }
        t
    }

    /// Ghosts are stored as `[a, b, GHOST]` with the outside to the left of a->b.
    fn contains_in_circle(&self, t: [usize; 3], d: Pt) -> bool {
        if t[2] == GHOST {
            let (a, b) = (self.pts[t[0]], self.pts[t[1]]);
            let o = orient(a, b, d);
            if o > 0.0 {
                return true;
            }
            if o < 0.0 {
                return false;
            }
            // on the hull line: only the open segment counts
            let dot = (d[0] - a[0]) * (b[0] - a[0]) + (d[1] - a[1]) * (b[1] - a[1]);
            let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
            dot > 0.0 && dot < len2
        } else {
            in_circle(self.pts[t[0]], self.pts[t[1]], self.pts[t[2]], d) > 0.0
        }
    }

    fn locate(&self, d: Pt) -> usize {
        // a real triangle containing d, else a ghost whose edge sees d
        let mut ghost = None;
        for (idx, t) in self.tris.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t[2] == GHOST {
                if ghost.is_none() && orient(self.pts[t[0]], self.pts[t[1]], d) > 0.0 {
                    ghost = Some(idx);
                }
                continue;
            }
            let (a, b, c) = (self.pts[t[0]], self.pts[t[1]], self.pts[t[2]]);
            if orient(a, b, d) >= 0.0 && orient(b, c, d) >= 0.0 && orient(c, a, d) >= 0.0 {
                return idx;
            }
        }
        ghost.expect("point not located in the triangulation")
    }

    fn insert(&mut self, v: usize) {
        let d = self.pts[v];
        let start = self.locate(d);
        let mut cavity = vec![start];
        let mut in_cavity = HashMap::from([(start, ())]);
        let mut queue = VecDeque::from([start]);
        while let Some(idx) = queue.pop_front() {
            let t = self.tris[idx].expect("live triangle");
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if let Some(&nb) = self.edge_owner.get(&(b, a)) {
                    if in_cavity.contains_key(&nb) {
                        continue;
                    }
                    let nt = self.tris[nb].expect("live neighbor");
                    if self.contains_in_circle(nt, d) {
                        in_cavity.insert(nb, ());
                        cavity.push(nb);
                        queue.push_back(nb);
                    }
                }
            }
        }
        let removed: Vec<[usize; 3]> = cavity.iter().map(|&i| self.remove(i)).collect();
        let mut interior = HashMap::new();
        for t in &removed {
            for k in 0..3 {
                interior.insert((t[k], t[(k + 1) % 3]), ());
            }
        }
        for t in &removed {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if interior.contains_key(&(b, a)) {
                    continue;
                }
                let nt = if a == GHOST {
                    [b, v, GHOST]
                } else if b == GHOST {
                    [v, a, GHOST]
                } else {
                    [a, b, v]
                };
                self.add(nt);
            }
        }
    }
}

fn planar(points: &PointSet) -> Result<Vec<Pt>> {
    if points.dim() != 2 {
        return Err(Error::UnsupportedDimension(points.dim()));
    }
    Ok((0..points.len())
        .map(|i| [points.coords()[(i, 0)], points.coords()[(i, 1)]])
        .collect())
}

/// Counter-clockwise triangles of the Delaunay triangulation.
pub fn delaunay_triangles(points: &PointSet) -> Result<Vec<[usize; 3]>> {
    let pts = planar(points)?;
    let m = pts.len();
    if m < 3 {
        return Err(Error::DegenerateInput(format!(
            "triangulation needs at least 3 points, got {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pts[a].partial_cmp(&pts[b]).expect("finite coordinates"));
    if let Some(w) = order.windows(2).find(|w| pts[w[0]] == pts[w[1]]) {
        return Err(Error::DegenerateInput(format!(
            "points {} and {} coincide",
            w[0].min(w[1]),
            w[0].max(w[1])
        )));
    }

    let extent = {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &pts {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (hi[0] - lo[0]).max(hi[1] - lo[1])
    };
    let collinear_tol = 1e-12 * extent * extent;
    let third = (2..m)
        .find(|&k| orient(pts[0], pts[1], pts[k]).abs() > collinear_tol)
        .ok_or_else(|| Error::DegenerateInput("all points are collinear".into()))?;

    let mut mesh = Mesh {
        pts: &pts,
        tris: Vec::new(),
        edge_owner: HashMap::new(),
    };
    let (a, b, c) = if orient(pts[0], pts[1], pts[third]) > 0.0 {
        (0, 1, third)
    } else {
        (1, 0, third)
    };
    mesh.add([a, b, c]);
    mesh.add([b, a, GHOST]);
    mesh.add([c, b, GHOST]);
    mesh.add([a, c, GHOST]);
    for v in (2..m).filter(|&v| v != third) {
        mesh.insert(v);
    }
    let mut tris: Vec<[usize; 3]> = mesh
        .tris
        .into_iter()
        .flatten()
        .filter(|t| t[2] != GHOST)
        .collect();
    tris.sort_unstable();
    Ok(tris)
}

/// Edges of the Delaunay triangulation of a planar point set.
pub fn delaunay_edges(points: &PointSet) -> Result<EdgeSet> {
    let tris = delaunay_triangles(points)?;
    let mut edges: Vec<(usize, usize)> = tris
        .iter()
        .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    EdgeSet::new(points.len(), edges)
}

/// Split edges into short and long by 1-d 2-means on their lengths and drop
/// the long cluster. Centroids start at the minimum and maximum length and
/// Lloyd iterations run to a fixed point; ties go to the short cluster.
pub fn prune_edges_kmeans(edges: &EdgeSet, points: &PointSet) -> EdgeSet {
    let lengths: Vec<f64> = edges
        .edges()
        .iter()
        .map(|&(a, b)| points.distance(a, b))
        .collect();
    let keep = short_cluster(&lengths);
    let kept = edges
        .edges()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&e, _)| e);
    EdgeSet::new(edges.nodes(), kept).expect("subset of a valid edge set")
}

fn short_cluster(lengths: &[f64]) -> Vec<bool> {
    let n = lengths.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = lengths.iter().sum::<f64>() / n as f64;
    let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64;
    if var < 1e-12 {
        return vec![true; n];
    }
    let mut lo = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut short: Vec<bool> = vec![false; n];
    loop {
        let next: Vec<bool> = lengths
            .iter()
            .map(|&l| (l - lo).abs() <= (l - hi).abs())
            .collect();
        if next == short {
            break;
        }
        short = next;
        let mean_of = |want: bool| {
            let (s, c) = lengths
                .iter()
                .zip(&short)
                .filter(|(_, &k)| k == want)
                .fold((0.0, 0usize), |(s, c), (&l, _)| (s + l, c + 1));
            (c > 0).then(|| s / c as f64)
        };
        if let Some(v) = mean_of(true) {
            lo = v;
        }
        if let Some(v) = mean_of(false) {
            hi = v;
        }
    }
    short
}
