//! The complete matching procedure.
//!
//! 1. For `rounds_k0` rounds: minimize node shifting against the source
//!    (`G_XY`), drop target nodes far from `PY`; minimize edge discrepancy
//!    (`F`), drop again.
//! 2. Minimize `F` on the surviving targets.
//! 3. Fix `Xbar = PY` and minimize node shifting against it (`G_XbarY`)
//!    over the pruned Delaunay graph of the source, starting from step 2.
//! 4. Round to a hard matching with a linear assignment on `-P`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::{sparsity_index, Matching, SoftAssignment};
use crate::delaunay::{delaunay_edges, prune_edges_kmeans};
use crate::error::{Error, Result};
use crate::fw::{minimize, FwConfig, FwTrace, Mode, Objective};
use crate::geometry::{
    complete_graph, normalize_points, point_distance, transform, EdgeSet, EdgeWeights,
    GraphInstance, PointSet,
};
use crate::lap::{solve_lap, CostMatrix};
use crate::objectives::{distance_matrix, EdgeDiscrepancy, NodeShifting, UnaryCost};
use crate::shape_context::shape_context_cost;

/// Threshold of the sparsity index reported in diagnostics.
pub const SPARSITY_LEVEL: f64 = 0.9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Every pair of source nodes, weighted by inverse length.
    #[default]
    Complete,
    /// Delaunay edges of the source, weighted by inverse length.
    Delaunay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalRule {
    /// Keep `Y_j` if it passes the ratio test for at least one source node.
    #[default]
    Union,
    /// Drop `Y_j` as soon as any source node rejects it.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FUnary {
    #[default]
    ShapeContext,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtgmConfig {
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
    pub ratio_k: f64,
    /// `None`: 2 rounds when `m < n`, none when `m = n`.
    pub rounds_k0: Option<usize>,
    pub fw_f: FwConfig,
    pub fw_g: FwConfig,
    pub connectivity: Connectivity,
    pub removal_rule: RemovalRule,
    pub f_unary: FUnary,
    /// Include `<P, D_XY>` in the removal-round node-shifting solve.
    pub g_xy_unary: bool,
    /// Run the final node-shifting stage; `false` stops after `F`.
    pub refine: bool,
    /// Scale each point set into `[0, 1]` independently before matching.
    pub normalize: bool,
    /// Re-normalize the surviving targets after each removal.
    pub renormalize_reduced: bool,
}

impl Default for AtgmConfig {
    fn default() -> Self {
        AtgmConfig {
            lambda: 1.0,
            lambda1: 1e3,
            lambda2: 1.0,
            epsilon: crate::objectives::DEFAULT_EPSILON,
            ratio_k: 1.5,
            rounds_k0: None,
            fw_f: FwConfig::nonconvex(),
            fw_g: FwConfig::convex(),
            connectivity: Connectivity::Complete,
            removal_rule: RemovalRule::Union,
            f_unary: FUnary::ShapeContext,
            g_xy_unary: true,
            refine: true,
            normalize: true,
            renormalize_reduced: false,
        }
    }
}

impl AtgmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon = {}", self.epsilon)));
        }
        if !(self.ratio_k > 0.0) {
            return Err(Error::InvalidParameter(format!("ratio_k = {}", self.ratio_k)));
        }
        self.fw_f.validate()?;
        self.fw_g.validate()
    }

    pub fn rounds(&self, m: usize, n: usize) -> usize {
        self.rounds_k0.unwrap_or(if m < n { 2 } else { 0 })
    }
}

/// Surviving target nodes, as sorted indices into the original target set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalState {
    n: usize,
    kept: Vec<usize>,
    history: Vec<usize>,
}

impl RemovalState {
    /// Nothing removed yet.
    pub fn full(n: usize) -> Self {
        RemovalState {
            n,
            kept: (0..n).collect(),
            history: vec![n],
        }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Kept counts, starting with the original size.
    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn original_len(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// The surviving subset of `y` (which must be the original target set).
    pub fn reduced(&self, y: &PointSet) -> PointSet {
        debug_assert_eq!(y.len(), self.n);
        y.select(&self.kept)
    }

    /// Keep only the entries at positions `local` of the current reduced set.
    fn restrict(&mut self, local: &[usize]) {
        self.kept = local.iter().map(|&j| self.kept[j]).collect();
        self.history.push(self.kept.len());
    }

    /// Compose with a removal computed on the current reduced set.
    pub fn compose(&mut self, step: &RemovalState) -> Result<()> {
        if step.n != self.kept.len() {
            return Err(Error::DimensionMismatch(format!(
                "removal over {} nodes applied to {} kept nodes",
                step.n,
                self.kept.len()
            )));
        }
        self.restrict(&step.kept);
        Ok(())
    }
}

/// Ratio-test outlier removal. With `d_ij = |Xbar_i - Y_j|` and
/// `d_i* = min_j d_ij`, target `j` passes the test for source `i` when
/// `d_ij <= ratio_k * d_i*`. If fewer than `m` targets survive, removed ones
/// are added back in increasing order of `min_i d_ij`.
pub fn remove_outliers_with(
    xbar: &PointSet,
    y: &PointSet,
    ratio_k: f64,
    m: usize,
    rule: RemovalRule,
) -> Result<RemovalState> {
    if !(ratio_k > 0.0) {
        return Err(Error::InvalidParameter(format!("ratio_k = {ratio_k}")));
    }
    if xbar.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}-d and {}-d point sets",
            xbar.dim(),
            y.dim()
        )));
    }
    let n = y.len();
    if n < m {
        return Err(Error::DegenerateInput(format!("{n} targets for {m} sources")));
    }
    let (a, b) = (xbar.coords(), y.coords());
    let mut nearest = vec![f64::INFINITY; n];
    let mut passes = vec![0usize; n];
    for i in 0..xbar.len() {
        let d: Vec<f64> = (0..n).map(|j| point_distance(a, i, b, j)).collect();
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        for j in 0..n {
            nearest[j] = nearest[j].min(d[j]);
            if d[j] <= ratio_k * best {
                passes[j] += 1;
            }
        }
    }
    let need = match rule {
        RemovalRule::Union => 1,
        RemovalRule::Literal => xbar.len(),
    };
    let mut keep: Vec<bool> = passes.iter().map(|&c| c >= need).collect();
    let count = keep.iter().filter(|&&k| k).count();
    if count < m {
        let mut removed: Vec<usize> = (0..n).filter(|&j| !keep[j]).collect();
        removed.sort_by(|&p, &q| nearest[p].total_cmp(&nearest[q]).then(p.cmp(&q)));
        for j in removed.into_iter().take(m - count) {
            keep[j] = true;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&j| keep[j]).collect();
    Ok(RemovalState {
        n,
        history: vec![n, kept.len()],
        kept,
    })
}

/// [`remove_outliers_with`] under the default (union) rule.
pub fn remove_outliers(xbar: &PointSet, y: &PointSet, ratio_k: f64, m: usize) -> Result<RemovalState> {
    remove_outliers_with(xbar, y, ratio_k, m, RemovalRule::Union)
}

/// Hard matching maximizing the total mass `sum_i P[i][sigma(i)]`.
pub fn post_discretize(p: &SoftAssignment) -> Result<Matching> {
    solve_lap(&CostMatrix::negated(p.matrix()))
}

/// One Frank-Wolfe solve inside the pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTrace {
    /// `g_xy`, `f` or `g_bar`.
    pub stage: String,
    /// Removal round (1-based), or 0 for the final stages.
    pub round: usize,
    /// Number of target nodes the solve ran over.
    pub targets: usize,
    pub trace: FwTrace,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rounds: usize,
    /// Kept target counts, starting with the original size.
    pub kept_history: Vec<usize>,
    /// Original indices of the targets that survived removal.
    pub kept: Vec<usize>,
    pub f_objective: f64,
    pub g_objective: Option<f64>,
    /// Sparsity index at [`SPARSITY_LEVEL`] of the soft assignment before rounding.
    pub sparsity: f64,
    pub stages: Vec<StageTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

pub struct AtgmOutput {
    /// In original target indices.
    pub matching: Matching,
    /// `m x n` over the original targets; removed columns are zero.
    pub assignment: SoftAssignment,
    pub diagnostics: Diagnostics,
}

fn check_inputs(x: &PointSet, y: &PointSet) -> Result<()> {
    for p in [x, y] {
        if p.dim() != 2 {
            return Err(Error::UnsupportedDimension(p.dim()));
        }
    }
    let (m, n) = (x.len(), y.len());
    if m < 2 || m > n {
        return Err(Error::DegenerateInput(format!(
            "need 2 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    Ok(())
}

/// Normalized copies of the inputs plus the source graph used by `F` and `G_XY`.
struct Prepared {
    x: PointSet,
    y: PointSet,
    gx: GraphInstance,
}

fn prepare(x: &PointSet, y: &PointSet, cfg: &AtgmConfig) -> Result<Prepared> {
    check_inputs(x, y)?;
    cfg.validate()?;
    let (x, y) = if cfg.normalize {
        (normalize_points(x)?, normalize_points(y)?)
    } else {
        (x.clone(), y.clone())
    };
    let gx = match cfg.connectivity {
        Connectivity::Complete => complete_graph(&x),
        Connectivity::Delaunay => {
            delaunay_edges(&x).and_then(|e| GraphInstance::with_inverse_length(x.clone(), e))
        }
    }
    .map_err(|e| e.in_stage("source graph"))?;
    Ok(Prepared { x, y, gx })
}

struct Run<'a> {
    prep: &'a Prepared,
    cfg: &'a AtgmConfig,
    state: RemovalState,
    y_red: PointSet,
    stages: Vec<StageTrace>,
}

impl<'a> Run<'a> {
    fn new(prep: &'a Prepared, cfg: &'a AtgmConfig) -> Self {
        Run {
            prep,
            cfg,
            state: RemovalState::full(prep.y.len()),
            y_red: prep.y.clone(),
            stages: Vec::new(),
        }
    }

    fn m(&self) -> usize {
        self.prep.x.len()
    }

    fn solve<O: Objective>(
        &mut self,
        stage: &'static str,
        round: usize,
        objective: &O,
        p0: &SoftAssignment,
        mode: Mode,
    ) -> Result<SoftAssignment> {
        let fw = match mode {
            Mode::NonconvexF => &self.cfg.fw_f,
            Mode::ConvexG => &self.cfg.fw_g,
        };
        let (p, trace) = minimize(objective, p0, fw, mode).map_err(|e| e.in_stage(stage))?;
        self.stages.push(StageTrace {
            stage: stage.to_string(),
            round,
            targets: self.y_red.len(),
            trace,
        });
        Ok(p)
    }

    fn edge_discrepancy(&self) -> Result<EdgeDiscrepancy> {
        let (m, n) = (self.m(), self.y_red.len());
        let unary = match self.cfg.f_unary {
            FUnary::ShapeContext => shape_context_cost(&self.prep.x, &self.y_red)?,
            FUnary::Zero => UnaryCost::zeros(m, n),
        };
        EdgeDiscrepancy::new(&self.prep.gx, &self.y_red, unary, self.cfg.lambda, self.cfg.epsilon)
    }

    fn solve_f(&mut self, round: usize) -> Result<SoftAssignment> {
        let f = self.edge_discrepancy().map_err(|e| e.in_stage("f"))?;
        let p0 = SoftAssignment::uniform(self.m(), self.y_red.len());
        self.solve("f", round, &f, &p0, Mode::NonconvexF)
    }

    fn solve_g_xy(&mut self, round: usize) -> Result<SoftAssignment> {
        let (m, n) = (self.m(), self.y_red.len());
        let d = if self.cfg.g_xy_unary {
            distance_matrix(&self.prep.x, &self.y_red)?
        } else {
            UnaryCost::zeros(m, n)
        };
        let g = NodeShifting::new(
            &self.prep.x,
            &self.y_red,
            &self.prep.gx.weights,
            d,
            self.cfg.lambda1,
            self.cfg.lambda2,
        )
        .map_err(|e| e.in_stage("g_xy"))?;
        self.solve("g_xy", round, &g, &SoftAssignment::uniform(m, n), Mode::ConvexG)
    }

    fn remove(&mut self, p: &SoftAssignment) -> Result<()> {
        let xbar = transform(p, &self.y_red)?;
        let step = remove_outliers_with(&xbar, &self.y_red, self.cfg.ratio_k, self.m(), self.cfg.removal_rule)
            .map_err(|e| e.in_stage("removal"))?;
        self.state.compose(&step)?;
        assert!(self.state.len() >= self.m(), "refill keeps at least m targets");
        let y = self.state.reduced(&self.prep.y);
        self.y_red = if self.cfg.renormalize_reduced {
            normalize_points(&y)?
        } else {
            y
        };
        Ok(())
    }

    fn removal_rounds(&mut self, rounds: usize) -> Result<()> {
        for round in 1..=rounds {
            let p = self.solve_g_xy(round)?;
            self.remove(&p)?;
            let p = self.solve_f(round)?;
            self.remove(&p)?;
        }
        Ok(())
    }
}

/// Graph for the final node-shifting stage: unit weights on the short
/// cluster of Delaunay edges, or on all pairs when no triangulation exists.
fn refinement_weights(x: &PointSet) -> EdgeWeights {
    match delaunay_edges(x) {
        Ok(e) => EdgeWeights::unit(&prune_edges_kmeans(&e, x)),
        Err(_) => EdgeWeights::unit(&EdgeSet::complete(x.len())),
    }
}

/// Runs only the removal rounds and returns which targets survive.
pub fn removal_loop(x: &PointSet, y: &PointSet, cfg: &AtgmConfig) -> Result<(RemovalState, Vec<StageTrace>)> {
    let prep = prepare(x, y, cfg)?;
    let mut run = Run::new(&prep, cfg);
    run.removal_rounds(cfg.rounds(x.len(), y.len()))?;
    Ok((run.state, run.stages))
}

fn expand(p: &SoftAssignment, kept: &[usize], n: usize) -> SoftAssignment {
    let mut full = DMatrix::zeros(p.rows(), n);
    for (local, &j) in kept.iter().enumerate() {
        full.set_column(j, &p.matrix().column(local));
    }
    SoftAssignment::from_combination(full)
}

/// Matches `x` into `y` (`2 <= m <= n`, planar).
pub fn atgm(x: &PointSet, y: &PointSet, cfg: &AtgmConfig) -> Result<AtgmOutput> {
    let prep = prepare(x, y, cfg)?;
    let (m, n) = (x.len(), y.len());
    let rounds = cfg.rounds(m, n);
    let mut run = Run::new(&prep, cfg);
    run.removal_rounds(rounds)?;

    let p_f = run.solve_f(0)?;
    let f_objective = run.stages.last().map_or(f64::NAN, |s| s.trace.final_objective());

    let (p, g_objective) = if cfg.refine {
        let xbar = transform(&p_f, &run.y_red)?;
        let sbar = refinement_weights(&prep.x);
        let d = distance_matrix(&xbar, &run.y_red)?;
        let g = NodeShifting::new(&xbar, &run.y_red, &sbar, d, cfg.lambda1, cfg.lambda2)
            .map_err(|e| e.in_stage("g_bar"))?;
        let p = run.solve("g_bar", 0, &g, &p_f, Mode::ConvexG)?;
        let obj = run.stages.last().map(|s| s.trace.final_objective());
        (p, obj)
    } else {
        (p_f, None)
    };

    let local = post_discretize(&p)?;
    let matching = local.remap(run.state.kept(), n)?;
    let diagnostics = Diagnostics {
        rounds,
        kept_history: run.state.history().to_vec(),
        kept: run.state.kept().to_vec(),
        f_objective,
        g_objective,
        sparsity: sparsity_index(&p, SPARSITY_LEVEL),
        stages: run.stages,
        accuracy: None,
    };
    Ok(AtgmOutput {
        matching,
        assignment: expand(&p, run.state.kept(), n),
        diagnostics,
    })
}
