//! Rectangular linear assignment.
//!
//! `solve_lap` is the shortest-augmenting-path form of the Hungarian method
//! with row and column potentials. Rows are inserted one at a time, so an
//! `m x n` problem with `m <= n` costs `O(m^2 n)` and is equivalent to
//! padding the matrix with `n - m` constant dummy rows.

use nalgebra::DMatrix;

use crate::assignment::Matching;
use crate::error::{Error, Result};

/// Largest target count accepted by the exhaustive solver.
pub const BRUTE_FORCE_MAX_N: usize = 8;

/// Dense row-major cost matrix with `rows <= cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} cost matrix",
                data.len()
            )));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, data }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Cost matrix `-m`, for maximizing total weight.
    pub fn negated(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| -m[(i, j)])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Total cost of `matching`.
    pub fn cost(&self, matching: &Matching) -> f64 {
        matching
            .assignment()
            .iter()
            .enumerate()
            .map(|(i, &j)| self.get(i, j))
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if self.rows > self.cols {
            return Err(Error::Shape(format!(
                "assignment needs rows <= cols, got {}x{}",
                self.rows, self.cols
            )));
        }
        if let Some(k) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "cost entry ({}, {})",
                k / self.cols,
                k % self.cols
            )));
        }
        Ok(())
    }
}

/// Minimum-cost injective assignment of every row to a distinct column.
pub fn solve_lap(c: &CostMatrix) -> Result<Matching> {
    c.validate()?;
    let (m, n) = (c.rows, c.cols);
    if m == 0 {
        return Matching::new(Vec::new(), n);
    }

    // 1-based rows and columns; column 0 is a virtual root and
    // `owner[j] == 0` means column j is free.
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=m {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = c.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "no free column reachable");
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; m];
    for j in 1..=n {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Matching::new(assignment, n)
}

/// Assignment solver that carries column potentials from one solve to the
/// next. Sequences of similar cost matrices (successive linearizations of a
/// smooth objective) then need only a few augmentations per solve.
///
/// The rectangular problem is solved as a square one with `cols - rows`
/// zero-cost dummy rows, so any set of column potentials is a valid start.
#[derive(Clone, Debug, Default)]
pub struct WarmLap {
    v: Vec<f64>,
}

impl WarmLap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, c: &CostMatrix) -> Result<Matching> {
        c.validate()?;
        let (m, n) = (c.rows, c.cols);
        if self.v.len() != n {
            self.v = vec![0.0; n];
        }
        let cost = |i: usize, j: usize| if i < m { c.get(i, j) } else { 0.0 };
        let v = &mut self.v;

        // Row potentials from the carried column potentials, then a greedy
        // matching on tight edges.
        let mut u = vec![0.0f64; n];
        let mut row_of = vec![usize::MAX; n];
        let mut col_of = vec![usize::MAX; n];
        for i in 0..n {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for j in 0..n {
                let r = cost(i, j) - v[j];
                if r < best || (r == best && row_of[arg] != usize::MAX && row_of[j] == usize::MAX) {
                    best = r;
                    arg = j;
                }
            }
            u[i] = best;
            if row_of[arg] == usize::MAX {
                row_of[arg] = i;
                col_of[i] = arg;
            }
        }

        let mut minv = vec![0.0f64; n];
        let mut way = vec![usize::MAX; n];
        let mut used = vec![false; n];
        let mut tree_rows = Vec::with_capacity(n);
        for start in 0..n {
            if col_of[start] != usize::MAX {
                continue;
            }
            minv.fill(f64::INFINITY);
            used.fill(false);
            tree_rows.clear();
            tree_rows.push(start);
            let mut i0 = start;
            let mut last;
            loop {
                let ui0 = u[i0];
                let mut delta = f64::INFINITY;
                let mut j1 = usize::MAX;
                for j in 0..n {
                    if used[j] {
                        continue;
                    }
                    let r = cost(i0, j) - ui0 - v[j];
                    if r < minv[j] {
                        minv[j] = r;
                        way[j] = i0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                debug_assert!(j1 != usize::MAX, "no free column reachable");
                for &r in &tree_rows {
                    u[r] += delta;
                }
                for j in 0..n {
                    if used[j] {
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                used[j1] = true;
                last = j1;
                match row_of[j1] {
                    usize::MAX => break,
                    r => {
                        tree_rows.push(r);
                        i0 = r;
                    }
                }
            }
            // Flip the alternating path ending at the free column `last`.
            let mut j = last;
            loop {
                let i = way[j];
                let prev = col_of[i];
                row_of[j] = i;
                col_of[i] = j;
                if i == start {
                    break;
                }
                j = prev;
            }
        }
        Matching::new(col_of[..m].to_vec(), n)
    }
}

/// Exhaustive minimum over all injective assignments. Among equal-cost
/// optima the lexicographically smallest assignment is returned.
pub fn brute_force_lap(c: &CostMatrix) -> Result<Matching> {
    c.validate()?;
    if c.cols > BRUTE_FORCE_MAX_N {
        return Err(Error::Capacity(format!(
            "exhaustive assignment limited to n <= {BRUTE_FORCE_MAX_N}, got {}",
            c.cols
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_injection(c.rows, c.cols, |sigma| {
        let cost: f64 = sigma.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, sigma.to_vec()));
        }
    });
    let (_, sigma) = best.expect("at least one injection exists");
    Matching::new(sigma, c.cols)
}

/// Calls `f` on every injective map `[0, m) -> [0, n)` in lexicographic order.
pub(crate) fn for_each_injection(m: usize, n: usize, mut f: impl FnMut(&[usize])) {
    fn rec(
        depth: usize,
        m: usize,
        n: usize,
        used: &mut [bool],
        sigma: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if depth == m {
            f(sigma);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                sigma.push(j);
                rec(depth + 1, m, n, used, sigma, f);
                sigma.pop();
                used[j] = false;
            }
        }
    }
    if m > n {
        return;
    }
    let mut used = vec![false; n];
    let mut sigma = Vec::with_capacity(m);
    rec(0, m, n, &mut used, &mut sigma, &mut f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(rows: usize, cols: usize, data: &[f64]) -> CostMatrix {
        CostMatrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_diagonal() {
        let c = CostMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let s = solve_lap(&c).unwrap();
        assert_eq!(s.assignment(), &[0, 1, 2]);
        assert_eq!(c.cost(&s), 0.0);
    }

    #[test]
    fn single_row_is_argmin() {
        let s = solve_lap(&cm(1, 3, &[5.0, 2.0, 7.0])).unwrap();
        assert_eq!(s.assignment(), &[1]);
    }

    #[test]
    fn brute_force_small_cases() {
        let s = brute_force_lap(&cm(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert_eq!(s.assignment(), &[0, 1]);
        let s = brute_force_lap(&cm(2, 3, &[0.0, 9.0, 9.0, 9.0, 9.0, 0.0])).unwrap();
        assert_eq!(s.assignment(), &[0, 2]);
        // all ties: lexicographically smallest
        let s = brute_force_lap(&cm(2, 3, &[1.0; 6])).unwrap();
        assert_eq!(s.assignment(), &[0, 1]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            solve_lap(&cm(3, 2, &[0.0; 6])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            solve_lap(&cm(1, 2, &[0.0, f64::NAN])),
            Err(Error::Numeric { .. })
        ));
        assert!(matches!(
            brute_force_lap(&CostMatrix::from_fn(2, 9, |_, _| 0.0)),
            Err(Error::Capacity(_))
        ));
        assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn integer_4x4_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let c = CostMatrix::from_fn(4, 4, |_, _| rng.random_range(0..20) as f64);
            let a = solve_lap(&c).unwrap();
            let b = brute_force_lap(&c).unwrap();
            assert_eq!(c.cost(&a), c.cost(&b));
        }
    }

    #[test]
    fn real_5x7_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let c = CostMatrix::from_fn(5, 7, |_, _| rng.random_range(-1.0..1.0));
            let a = solve_lap(&c).unwrap();
            let b = brute_force_lap(&c).unwrap();
            assert!((c.cost(&a) - c.cost(&b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn large_instance_is_injective() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = CostMatrix::from_fn(120, 150, |_, _| rng.random::<f64>());
        let s = solve_lap(&c).unwrap();
        assert_eq!(s.len(), 120);
    }

    #[test]
    fn warm_solver_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut warm = WarmLap::new();
        for _ in 0..500 {
            let n = rng.random_range(1..=7);
            let m = rng.random_range(1..=n);
            let c = CostMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let a = warm.solve(&c).unwrap();
            let b = brute_force_lap(&c).unwrap();
            assert!((c.cost(&a) - c.cost(&b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn warm_solver_on_drifting_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (m, n) = (60, 80);
        let mut base: Vec<f64> = (0..m * n).map(|_| rng.random::<f64>()).collect();
        let mut warm = WarmLap::new();
        for _ in 0..30 {
            for x in base.iter_mut() {
                *x += 0.05 * rng.random_range(-1.0..1.0);
            }
            let c = CostMatrix::new(m, n, base.clone()).unwrap();
            let a = warm.solve(&c).unwrap();
            let b = solve_lap(&c).unwrap();
            assert!((c.cost(&a) - c.cost(&b)).abs() <= 1e-9);
        }
    }

    fn small_matrix() -> impl Strategy<Value = CostMatrix> {
        (1usize..=5, 0usize..=2).prop_flat_map(|(m, extra)| {
            let n = m + extra;
            proptest::collection::vec(-50i32..50, m * n)
                .prop_map(move |v| cm(m, n, &v.iter().map(|&x| x as f64).collect::<Vec<_>>()))
        })
    }

    proptest! {
        #[test]
        fn shift_keeps_optimality(c in small_matrix(), shift in -100i32..100) {
            let shifted = CostMatrix::from_fn(c.rows(), c.cols(), |i, j| c.get(i, j) + shift as f64);
            let opt = c.cost(&brute_force_lap(&c).unwrap());
            let s = solve_lap(&shifted).unwrap();
            prop_assert_eq!(shifted.cost(&s), opt + (c.rows() as f64) * shift as f64);
        }

        #[test]
        fn warm_solver_integer_optimal(c in small_matrix(), d in small_matrix()) {
            let mut warm = WarmLap::new();
            for x in [&c, &d, &c] {
                let s = warm.solve(x).unwrap();
                prop_assert_eq!(x.cost(&s), x.cost(&brute_force_lap(x).unwrap()));
            }
        }

        #[test]
        fn positive_scale_keeps_assignment(c in small_matrix(), k in 1u32..7) {
            let scaled = CostMatrix::from_fn(c.rows(), c.cols(), |i, j| c.get(i, j) * k as f64);
            prop_assert_eq!(solve_lap(&c).unwrap(), solve_lap(&scaled).unwrap());
        }
    }
}
