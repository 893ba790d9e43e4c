//! Log-polar shape-context descriptors and their chi-squared matching cost.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::objectives::UnaryCost;

pub const ANGULAR_BINS: usize = 12;
pub const RADIAL_BINS: usize = 5;
/// Radial range as multiples of the mean pairwise distance of the set.
pub const RADIUS_INNER: f64 = 0.125;
pub const RADIUS_OUTER: f64 = 2.0;

const BINS: usize = ANGULAR_BINS * RADIAL_BINS;

/// One normalized histogram per point, `ANGULAR_BINS * RADIAL_BINS` wide.
///
/// The outer radial edges are log-spaced from `RADIUS_INNER` to
/// `RADIUS_OUTER` (0.125, 0.25, ..., 2 mean distances); neighbours closer
/// than the inner edge fall in the first ring and those beyond the outer
/// edge are not counted.
pub fn descriptors(points: &PointSet) -> Result<Vec<[f64; BINS]>> {
    if points.dim() != 2 {
        return Err(Error::UnsupportedDimension(points.dim()));
    }
    let m = points.len();
    if m < 2 {
        return Err(Error::DegenerateInput(
            "shape context needs at least two points".into(),
        ));
    }
    let c = points.coords();
    let mut mean = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            mean += points.distance(a, b);
        }
    }
    mean /= (m * (m - 1) / 2) as f64;
    if mean <= 0.0 {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let ratio = RADIUS_OUTER / RADIUS_INNER;
    let edges: Vec<f64> = (0..RADIAL_BINS)
        .map(|k| RADIUS_INNER * ratio.powf(k as f64 / (RADIAL_BINS - 1) as f64))
        .collect();
    let two_pi = std::f64::consts::TAU;

    let mut out = Vec::with_capacity(m);
    for a in 0..m {
        let mut h = [0.0f64; BINS];
        let mut count = 0usize;
        for b in 0..m {
            if a == b {
                continue;
            }
            let (dx, dy) = (c[(b, 0)] - c[(a, 0)], c[(b, 1)] - c[(a, 1)]);
            let r = (dx * dx + dy * dy).sqrt() / mean;
            let Some(ring) = edges.iter().position(|&e| r < e) else {
                continue;
            };
            let theta = dy.atan2(dx).rem_euclid(two_pi);
            let sector = ((theta / two_pi * ANGULAR_BINS as f64) as usize).min(ANGULAR_BINS - 1);
            h[ring * ANGULAR_BINS + sector] += 1.0;
            count += 1;
        }
        if count > 0 {
            for v in &mut h {
                *v /= count as f64;
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// `0.5 * sum_b (g(b) - h(b))^2 / (g(b) + h(b))`, skipping empty bins.
pub fn chi_squared(g: &[f64], h: &[f64]) -> f64 {
    0.5 * g
        .iter()
        .zip(h)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b).powi(2) / (a + b))
        .sum::<f64>()
}

/// Chi-squared cost between the descriptor of each `X_i` (computed within
/// `X`) and each `Y_j` (computed within `Y`).
pub fn shape_context_cost(x: &PointSet, y: &PointSet) -> Result<UnaryCost> {
    let hx = descriptors(x)?;
    let hy = descriptors(y)?;
    UnaryCost::new(DMatrix::from_fn(hx.len(), hy.len(), |i, j| {
        chi_squared(&hx[i], &hy[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_cost_has_zero_diagonal_and_bounded_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<[f64; 2]> = (0..25).map(|_| [rng.random(), rng.random()]).collect();
        let x = PointSet::from_rows(&rows).unwrap();
        let c = shape_context_cost(&x, &x).unwrap();
        for i in 0..25 {
            assert_eq!(c.matrix()[(i, i)], 0.0);
        }
        assert!(c.matrix().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn translated_triangle_matches_vertexwise() {
        let tri = [[0.0, 0.0], [1.0, 0.25], [0.5, 0.75]];
        let moved: Vec<[f64; 2]> = [2, 0, 1].iter().map(|&k| [tri[k][0] + 2.0, tri[k][1] - 1.0]).collect();
        let c = shape_context_cost(
            &PointSet::from_rows(&tri).unwrap(),
            &PointSet::from_rows(&moved).unwrap(),
        )
        .unwrap();
        // X_0 -> Y_1, X_1 -> Y_2, X_2 -> Y_0
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            assert_eq!(c.matrix()[(i, j)], 0.0);
        }
        assert!(c.matrix()[(0, 0)] > 0.0);
    }

    #[test]
    fn histograms_are_normalized() {
        let x = PointSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.4, 0.4]]).unwrap();
        for h in descriptors(&x).unwrap() {
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(descriptors(&PointSet::from_rows(&[[0.0], [1.0]]).unwrap()).is_err());
    }
}
