//! Synthetic benchmark: point-set generation, metrics and seeded sweeps.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_matrix, AffinityKind};
use crate::assignment::Matching;
use crate::baseline::spectral_match;
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::pipeline::{atgm, removal_loop, AtgmConfig};

pub use crate::assignment::sparsity_index;

/// Length-only affinity scale used for the spectral baseline.
pub const SPECTRAL_SCALE: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_in < 2 {
            return Err(Error::InvalidParameter(format!("n_in = {}", self.n_in)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {}", self.sigma)));
        }
        Ok(())
    }
}

/// A generated instance: `gt` sends source `i` to the target holding its
/// noisy copy.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub x: PointSet,
    pub y: PointSet,
    pub gt: Matching,
}

/// Inliers `X ~ N(0, I)` in the plane; `Y` holds `X_i + N(0, sigma^2 I)` and
/// `n_out` further `N(0, I)` points, in an order shuffled by the same
/// ChaCha8 stream.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, n) = (spec.n_in, spec.n_in + spec.n_out);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut x = DMatrix::zeros(m, 2);
    for i in 0..m {
        for k in 0..2 {
            x[(i, k)] = normal(&mut rng);
        }
    }
    let mut items = DMatrix::zeros(n, 2);
    for i in 0..m {
        for k in 0..2 {
            items[(i, k)] = x[(i, k)] + spec.sigma * normal(&mut rng);
        }
    }
    for i in m..n {
        for k in 0..2 {
            items[(i, k)] = normal(&mut rng);
        }
    }
    // order[pos] = item placed at target position pos
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut y = DMatrix::zeros(n, 2);
    let mut gt = vec![0; m];
    for (pos, &item) in order.iter().enumerate() {
        y.set_row(pos, &items.row(item));
        if item < m {
            gt[item] = pos;
        }
    }
    Ok(Synthetic {
        x: PointSet::new(x)?,
        y: PointSet::new(y)?,
        gt: Matching::new(gt, n)?,
    })
}

/// Fraction of sources sent to their ground-truth target.
pub fn accuracy(found: &Matching, gt: &Matching) -> Result<f64> {
    if found.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "matching has {} sources, ground truth {}",
            found.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Ok(1.0);
    }
    let hits = found
        .assignment()
        .iter()
        .zip(gt.assignment())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Atgm,
    Spectral,
}

/// One grid point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_in: usize,
    pub n_out: usize,
    pub sigma: f64,
    pub config: AtgmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub trials: usize,
    pub method: Method,
    /// Run the removal rounds first and match against the surviving targets.
    pub removal_preprocess: bool,
    pub seed_base: u64,
    /// Record wall time; when off the column is 0, so output depends only on seeds.
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub cell: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub sparsity: Option<f64>,
    pub wall_time: f64,
    pub stage_objectives: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub sigma: f64,
    pub trials: usize,
    pub failed: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_sparsity: Option<f64>,
    pub mean_wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub method: Method,
    pub removal_preprocess: bool,
    pub seed_base: u64,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialResult>,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in cell `cell`.
pub fn trial_seed(seed_base: u64, cell: usize, trial: usize) -> u64 {
    mix(mix(mix(seed_base) ^ cell as u64) ^ trial as u64)
}

struct Outcome {
    accuracy: f64,
    sparsity: Option<f64>,
    stage_objectives: Vec<f64>,
}

fn spectral_on(x: &PointSet, y: &PointSet) -> Result<Matching> {
    let w = affinity_matrix(x, y, AffinityKind::LengthOnly { scale: SPECTRAL_SCALE }, None)?;
    Ok(spectral_match(&w, x.len(), y.len())?.matching)
}

/// Spectral matching with the length-only affinity, optionally against the
/// targets that survive the removal rounds of `cfg`. The result is in
/// original target indices.
pub fn spectral_baseline(x: &PointSet, y: &PointSet, cfg: &AtgmConfig, removal_preprocess: bool) -> Result<Matching> {
    if removal_preprocess {
        let (state, _) = removal_loop(x, y, cfg)?;
        spectral_on(x, &state.reduced(y))?.remap(state.kept(), y.len())
    } else {
        spectral_on(x, y)
    }
}

fn run_trial(data: &Synthetic, cfg: &AtgmConfig, opts: &SweepOptions) -> Result<Outcome> {
    match opts.method {
        Method::Atgm => {
            let out = atgm(&data.x, &data.y, cfg)?;
            Ok(Outcome {
                accuracy: accuracy(&out.matching, &data.gt)?,
                sparsity: Some(out.diagnostics.sparsity),
                stage_objectives: out
                    .diagnostics
                    .stages
                    .iter()
                    .map(|s| s.trace.final_objective())
                    .collect(),
            })
        }
        Method::Spectral => {
            let matching = spectral_baseline(&data.x, &data.y, cfg, opts.removal_preprocess)?;
            Ok(Outcome {
                accuracy: accuracy(&matching, &data.gt)?,
                sparsity: None,
                stage_objectives: Vec::new(),
            })
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut k) = (0.0, 0usize);
    for v in values {
        s += v;
        k += 1;
    }
    (k > 0).then(|| s / k as f64)
}

/// Runs every cell for `opts.trials` seeded trials in parallel. Failed
/// trials are recorded with their error and excluded from the means.
pub fn run_sweep(grid: &[SweepCell], opts: &SweepOptions) -> Result<SweepResults> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty sweep grid".into()));
    }
    if opts.trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if opts.method == Method::Atgm && opts.removal_preprocess {
        return Err(Error::InvalidParameter(
            "removal pre-processing applies to the spectral baseline; atgm runs its own removal".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..opts.trials).map(move |t| (c, t)))
        .collect();
    let trials: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cell = &grid[c];
            let seed = trial_seed(opts.seed_base, c, t);
            let spec = SyntheticSpec {
                n_in: cell.n_in,
                n_out: cell.n_out,
                sigma: cell.sigma,
                seed,
            };
            let start = Instant::now();
            let res = gen_synthetic(&spec).and_then(|d| run_trial(&d, &cell.config, opts));
            let wall_time = if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            let mut row = TrialResult {
                cell: c,
                n_in: cell.n_in,
                n_out: cell.n_out,
                sigma: cell.sigma,
                trial: t,
                seed,
                accuracy: None,
                sparsity: None,
                wall_time,
                stage_objectives: Vec::new(),
                error: None,
            };
            match res {
                Ok(o) => {
                    row.accuracy = Some(o.accuracy);
                    row.sparsity = o.sparsity;
                    row.stage_objectives = o.stage_objectives;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();

    let cells = grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let rows: Vec<&TrialResult> = trials.iter().filter(|r| r.cell == c).collect();
            CellSummary {
                cell: c,
                n_in: cell.n_in,
                n_out: cell.n_out,
                sigma: cell.sigma,
                trials: rows.len(),
                failed: rows.iter().filter(|r| r.error.is_some()).count(),
                mean_accuracy: mean(rows.iter().filter_map(|r| r.accuracy)),
                mean_sparsity: mean(rows.iter().filter_map(|r| r.sparsity)),
                mean_wall_time: mean(rows.iter().map(|r| r.wall_time)).unwrap_or(0.0),
            }
        })
        .collect();
    Ok(SweepResults {
        method: opts.method,
        removal_preprocess: opts.removal_preprocess,
        seed_base: opts.seed_base,
        cells,
        trials,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    n_in: usize,
    n_out: usize,
    sigma: f64,
    trial: usize,
    seed: u64,
    accuracy: Option<f64>,
    sparsity: Option<f64>,
    wall_time: f64,
    error: Option<&'a str>,
}

/// One row per trial.
pub fn write_trials_csv<W: Write>(results: &SweepResults, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &results.trials {
        w.serialize(CsvRow {
            n_in: r.n_in,
            n_out: r.n_out,
            sigma: r.sigma,
            trial: r.trial,
            seed: r.seed,
            accuracy: r.accuracy,
            sparsity: r.sparsity,
            wall_time: r.wall_time,
            error: r.error.as_deref(),
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    method: Method,
    removal_preprocess: bool,
    seed_base: u64,
    cells: &'a [CellSummary],
}

/// Per-cell aggregates as pretty JSON.
pub fn write_summary_json<W: Write>(results: &SweepResults, mut out: W) -> Result<()> {
    let s = Summary {
        method: results.method,
        removal_preprocess: results.removal_preprocess,
        seed_base: results.seed_base,
        cells: &results.cells,
    };
    serde_json::to_writer_pretty(&mut out, &s).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writeln!(out)?;
    Ok(())
}

/// Inlier counts of the large-scale table.
pub const TABLE1_SIZES: [usize; 4] = [100, 300, 500, 1000];
pub const TABLE1_SIGMAS: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];
/// Outlier counts as fractions of the inlier count.
pub const TABLE1_OUTLIER_RATIOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Which parameter varies along the columns of a preset grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotAxis {
    Sigma,
    OutlierRatio,
}

/// Noise grid: sizes up to `max_n` by the five noise levels, no outliers.
pub fn table1_noise_grid(max_n: usize, config: &AtgmConfig) -> Vec<SweepCell> {
    TABLE1_SIZES
        .iter()
        .filter(|&&n| n <= max_n)
        .flat_map(|&n_in| {
            TABLE1_SIGMAS.iter().map(move |&sigma| SweepCell {
                n_in,
                n_out: 0,
                sigma,
                config: config.clone(),
            })
        })
        .collect()
}

/// Outlier grid: sizes up to `max_n` by the five outlier ratios, no noise.
pub fn table1_outlier_grid(max_n: usize, config: &AtgmConfig) -> Vec<SweepCell> {
    TABLE1_SIZES
        .iter()
        .filter(|&&n| n <= max_n)
        .flat_map(|&n_in| {
            TABLE1_OUTLIER_RATIOS.iter().map(move |&r| SweepCell {
                n_in,
                n_out: (r * n_in as f64).round() as usize,
                sigma: 0.0,
                config: config.clone(),
            })
        })
        .collect()
}

/// Mean accuracy in percent, one row per inlier count and one column per
/// value of `axis`. Cells with no successful trial are left empty.
pub fn write_pivot_csv<W: Write>(results: &SweepResults, axis: PivotAxis, out: W) -> Result<()> {
    let key = |c: &CellSummary| match axis {
        PivotAxis::Sigma => c.sigma,
        PivotAxis::OutlierRatio => c.n_out as f64 / c.n_in as f64,
    };
    let mut cols: Vec<f64> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    for c in &results.cells {
        let k = key(c);
        if !cols.iter().any(|&x| (x - k).abs() < 1e-12) {
            cols.push(k);
        }
        if !rows.contains(&c.n_in) {
            rows.push(c.n_in);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let corner = match axis {
        PivotAxis::Sigma => "n_in/sigma",
        PivotAxis::OutlierRatio => "n_in/outlier_ratio",
    };
    let mut header = vec![corner.to_string()];
    header.extend(cols.iter().map(|c| format!("{c}")));
    w.write_record(&header).map_err(to_io)?;
    for &n in &rows {
        let mut rec = vec![n.to_string()];
        for &col in &cols {
            let cell = results
                .cells
                .iter()
                .find(|c| c.n_in == n && (key(c) - col).abs() < 1e-12);
            rec.push(
                cell.and_then(|c| c.mean_accuracy)
                    .map_or(String::new(), |a| format!("{:.2}", 100.0 * a)),
            );
        }
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
