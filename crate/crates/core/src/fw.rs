//! Frank-Wolfe minimization over the relaxed assignment polytope.
//!
//! Each iteration linearizes the objective at `P`, solves the linear
//! assignment problem on the gradient to get a vertex `P~`, and moves to
//! `(1 - alpha) P + alpha P~`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::{Feasibility, Matching, SoftAssignment};
use crate::error::{Error, Result};
use crate::lap::{CostMatrix, WarmLap};
use crate::objectives::ObjectiveEval;

/// A differentiable functional of an `m x n` assignment matrix.
pub trait Objective {
    fn evaluate(&self, p: &DMatrix<f64>) -> Result<ObjectiveEval>;

    fn value(&self, p: &DMatrix<f64>) -> Result<f64> {
        Ok(self.evaluate(p)?.value)
    }

    /// Additive term dropped from `evaluate` because it takes the same value
    /// at every point of the polytope with `rows` rows. Traces report
    /// `evaluate + polytope_constant`.
    fn polytope_constant(&self, _rows: usize) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Backtracking line search, relative-decrease stop.
    NonconvexF,
    /// Exact quadratic line search, duality-gap or relative-decrease stop.
    ConvexG,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FwConfig {
    pub max_iters: usize,
    /// Stop once `(g_old - g_new) / (1 + |g_old|)` drops below this.
    pub rel_tol: f64,
    /// Convex mode stops once the gap drops below `gap_tol * (1 + |g|)`.
    pub gap_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
}

impl FwConfig {
    pub fn nonconvex() -> Self {
        FwConfig {
            max_iters: 200,
            rel_tol: 1e-9,
            gap_tol: 0.0,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
        }
    }

    pub fn convex() -> Self {
        FwConfig {
            max_iters: 100,
            rel_tol: 1e-7,
            gap_tol: 1e-7,
            ..Self::nonconvex()
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::NonconvexF => Self::nonconvex(),
            Mode::ConvexG => Self::convex(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("rel_tol {}", self.rel_tol)));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("gap_tol {}", self.gap_tol)));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidParameter(format!("armijo_c {}", self.armijo_c)));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "armijo_shrink {}",
                self.armijo_shrink
            )));
        }
        Ok(())
    }
}

impl Default for FwConfig {
    fn default() -> Self {
        Self::nonconvex()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FwIteration {
    /// Objective after the step.
    pub objective: f64,
    pub alpha: f64,
    /// `<grad g(P), P - P~>` at the iterate before the step.
    pub gap: f64,
    /// Vertex returned by the linear subproblem.
    pub vertex: Matching,
    /// Feasibility of the iterate after the step.
    pub feasibility: Feasibility,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GapTolerance,
    RelativeDecrease,
    /// Line search returned zero.
    ZeroStep,
    /// The step would have increased the objective; it was rejected.
    Increase,
    MaxIterations,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FwTrace {
    pub mode: Mode,
    pub initial_objective: f64,
    pub iterations: Vec<FwIteration>,
    pub stop: StopReason,
    /// Gap at the returned iterate (convex mode only).
    pub final_gap: Option<f64>,
}

impl FwTrace {
    pub fn final_objective(&self) -> f64 {
        self.iterations
            .last()
            .map_or(self.initial_objective, |it| it.objective)
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// `initial_objective` followed by the objective after each step.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|it| it.objective))
            .collect()
    }

    /// True when no recorded objective exceeds its predecessor.
    pub fn is_monotone(&self) -> bool {
        self.objectives().windows(2).all(|w| w[1] <= w[0])
    }

    pub fn all_feasible(&self) -> bool {
        self.iterations.iter().all(|it| it.feasibility.is_feasible())
    }
}

fn vertex(grad: &DMatrix<f64>, lap: &mut WarmLap) -> Result<Matching> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("gradient"));
    }
    lap.solve(&CostMatrix::from_matrix(grad))
}

/// Vertex of the polytope minimizing `<grad, P>`.
pub fn linearized_step(grad: &DMatrix<f64>) -> Result<SoftAssignment> {
    Ok(SoftAssignment::from_matching(&vertex(grad, &mut WarmLap::new())?))
}

/// Minimizer on `[0, 1]` of the quadratic through `phi(0)`, `phi'(0)` and `phi(1)`.
pub fn quadratic_step(phi0: f64, dphi0: f64, phi1: f64) -> f64 {
    if dphi0 >= 0.0 {
        return 0.0;
    }
    let a = phi1 - phi0 - dphi0;
    if a <= 1e-14 {
        return 1.0;
    }
    (-dphi0 / (2.0 * a)).clamp(0.0, 1.0)
}

fn step_point(p: &DMatrix<f64>, delta: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let mut q = p + delta * alpha;
    q.apply(|v| *v = v.clamp(0.0, 1.0));
    q
}

/// Exact step for an objective that is quadratic along `P -> P~`.
pub fn line_search_exact_quadratic<O: Objective + ?Sized>(
    objective: &O,
    p: &SoftAssignment,
    ptilde: &SoftAssignment,
) -> Result<f64> {
    let e = objective.evaluate(p.matrix())?;
    let delta = ptilde.matrix() - p.matrix();
    let phi1 = objective.value(ptilde.matrix())?;
    Ok(quadratic_step(e.value, e.gradient.dot(&delta), phi1))
}

fn backtrack<O: Objective + ?Sized>(
    objective: &O,
    p: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    phi0: f64,
    dphi0: f64,
    cfg: &FwConfig,
) -> Result<f64> {
    if !(dphi0 < 0.0) {
        return Ok(0.0);
    }
    let mut alpha = 1.0;
    // Below ~2^-60 the trial point no longer differs from P.
    for _ in 0..60 {
        let v = objective.value(&step_point(p, delta, alpha))?;
        if v <= phi0 + cfg.armijo_c * alpha * dphi0 {
            return Ok(alpha);
        }
        alpha *= cfg.armijo_shrink;
    }
    Ok(0.0)
}

/// Largest `alpha` in `{1, s, s^2, ...}` satisfying the Armijo condition.
pub fn line_search_backtracking<O: Objective + ?Sized>(
    objective: &O,
    p: &SoftAssignment,
    ptilde: &SoftAssignment,
    cfg: &FwConfig,
) -> Result<f64> {
    cfg.validate()?;
    let e = objective.evaluate(p.matrix())?;
    let delta = ptilde.matrix() - p.matrix();
    backtrack(objective, p.matrix(), &delta, e.value, e.gradient.dot(&delta), cfg)
}

fn at_iteration(e: Error, k: usize) -> Error {
    match e {
        Error::Numeric { what, .. } => Error::Numeric {
            what,
            iteration: Some(k),
        },
        e => e,
    }
}

/// Runs Frank-Wolfe from `p0`.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    p0: &SoftAssignment,
    cfg: &FwConfig,
    mode: Mode,
) -> Result<(SoftAssignment, FwTrace)> {
    cfg.validate()?;
    let offset = objective.polytope_constant(p0.rows());
    let mut p = p0.matrix().clone();
    let mut lap = WarmLap::new();
    let mut eval = objective.evaluate(&p).map_err(|e| at_iteration(e, 0))?;
    let mut trace = FwTrace {
        mode,
        initial_objective: eval.value + offset,
        iterations: Vec::new(),
        stop: StopReason::MaxIterations,
        final_gap: None,
    };

    for k in 1..=cfg.max_iters {
        let v = vertex(&eval.gradient, &mut lap).map_err(|e| at_iteration(e, k))?;
        let ptilde = SoftAssignment::from_matching(&v);
        let delta = ptilde.matrix() - &p;
        let dphi0 = eval.gradient.dot(&delta);
        let gap = -dphi0;

        let record = |alpha: f64, objective: f64, p: &DMatrix<f64>, trace: &mut FwTrace| {
            trace.iterations.push(FwIteration {
                objective,
                alpha,
                gap,
                vertex: v.clone(),
                feasibility: Feasibility::of(p),
            });
        };

        if mode == Mode::ConvexG && gap < cfg.gap_tol * (1.0 + eval.value.abs()) {
            record(0.0, eval.value + offset, &p, &mut trace);
            trace.stop = StopReason::GapTolerance;
            trace.final_gap = Some(gap);
            return Ok((SoftAssignment::from_combination(p), trace));
        }

        let alpha = match mode {
            Mode::NonconvexF => backtrack(objective, &p, &delta, eval.value, dphi0, cfg),
            Mode::ConvexG => objective
                .value(ptilde.matrix())
                .map(|phi1| quadratic_step(eval.value, dphi0, phi1)),
        }
        .map_err(|e| at_iteration(e, k))?;

        if alpha == 0.0 {
            record(0.0, eval.value + offset, &p, &mut trace);
            trace.stop = StopReason::ZeroStep;
            break;
        }

        let next = step_point(&p, &delta, alpha);
        let next_eval = objective.evaluate(&next).map_err(|e| at_iteration(e, k))?;
        if next_eval.value > eval.value {
            record(0.0, eval.value + offset, &p, &mut trace);
            trace.stop = StopReason::Increase;
            break;
        }
        let decrease = (eval.value - next_eval.value) / (1.0 + eval.value.abs());
        record(alpha, next_eval.value + offset, &next, &mut trace);
        p = next;
        eval = next_eval;
        if decrease < cfg.rel_tol {
            trace.stop = StopReason::RelativeDecrease;
            break;
        }
    }

    if mode == Mode::ConvexG {
        let v = vertex(&eval.gradient, &mut lap)?;
        let ptilde = SoftAssignment::from_matching(&v);
        trace.final_gap = Some(eval.gradient.dot(&(&p - ptilde.matrix())));
    }
    Ok((SoftAssignment::from_combination(p), trace))
}
