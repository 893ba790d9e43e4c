//! `atgm`: match two point-set files, run synthetic sweeps, run the spectral
//! baseline, or run the outlier pre-filter on its own.
//!
//! Exit codes: 0 success, 2 bad input or arguments, 3 numeric failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atgm_core::experiment::{
    accuracy, run_sweep, spectral_baseline, table1_noise_grid, table1_outlier_grid, write_pivot_csv,
    write_summary_json, write_trials_csv, Method, PivotAxis, SweepCell, SweepOptions,
};
use atgm_core::io::{read_matching, read_points, write_indices, write_matching, write_points};
use atgm_core::pipeline::{atgm, removal_loop, AtgmConfig, Connectivity};
use atgm_core::{Error, PointSet};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "atgm", version, about = "Geometric graph matching by adaptive transformation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match every source point to a distinct target point.
    Match(MatchArgs),
    /// Run seeded synthetic trials over a grid and report accuracy.
    Sweep(SweepArgs),
    /// Match with the spectral baseline, optionally after outlier removal.
    Baseline(BaselineArgs),
    /// Run only the outlier-removal rounds and write the surviving targets.
    Filter(FilterArgs),
}

/// Matcher parameters. Unset flags keep the value from `--config`, or the
/// defaults (lambda 1, lambda1 1e3, lambda2 1).
#[derive(Args)]
struct Tunables {
    /// JSON file with matcher parameters; missing fields take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Weight of the edge-discrepancy term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the l1 term of node shifting.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the pairwise node-shifting term.
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Ratio test threshold of outlier removal.
    #[arg(long)]
    ratio_k: Option<f64>,
    /// Outlier-removal rounds (default 2 when the target is larger, else 0).
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_enum)]
    connectivity: Option<ConnectivityArg>,
    /// Use the coordinates as given instead of scaling each set into [0, 1].
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnectivityArg {
    Complete,
    Delaunay,
}

#[derive(Args)]
struct MatchArgs {
    source: PathBuf,
    target: PathBuf,
    /// Matching file ("i j" lines); stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write diagnostics as JSON.
    #[arg(long, value_name = "PATH")]
    diagnostics: Option<PathBuf>,
    /// Ground-truth matching; adds an accuracy field to the diagnostics.
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Inlier counts by noise levels 0.02..0.10, no outliers.
    Table1Noise,
    /// Inlier counts by outlier ratios 0.2..1.0, no noise.
    Table1Outliers,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Atgm,
    Spectral,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    /// One row per trial.
    Csv,
    /// Per-cell aggregates.
    Json,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Largest inlier count taken from a preset.
    #[arg(long, default_value_t = 100)]
    max_n: usize,
    /// Inlier counts of a custom grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    n_in: Vec<usize>,
    /// Outlier counts of a custom grid.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    n_out: Vec<usize>,
    /// Noise levels of a custom grid.
    #[arg(long, value_delimiter = ',', default_value = "0.02")]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Seed base; every trial seed derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Atgm)]
    method: MethodArg,
    /// With the spectral method, match against the targets kept by outlier removal.
    #[arg(long)]
    removal_preprocess: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    output: OutputFormat,
    /// Results file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also write mean accuracy (%) as a table: inlier counts by the varied parameter.
    #[arg(long, value_name = "PATH")]
    pivot: Option<PathBuf>,
    /// Report zero wall time so that output depends only on the seed.
    #[arg(long)]
    no_timing: bool,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Args)]
struct BaselineArgs {
    source: PathBuf,
    target: PathBuf,
    /// Run the outlier-removal rounds first.
    #[arg(long)]
    removal_preprocess: bool,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Ground-truth matching; accuracy is printed to stderr.
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Args)]
struct FilterArgs {
    source: PathBuf,
    target: PathBuf,
    /// Point file of the surviving targets (original coordinates); stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Original indices of the surviving targets, one per line.
    #[arg(long, value_name = "PATH")]
    kept: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

enum Failure {
    Input(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn with_path<T>(path: &Path, r: atgm_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        Failure::Numeric(m) => Failure::Numeric(m),
    })
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn create(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn load_points(path: &Path) -> CliResult<PointSet> {
    with_path(path, read_points(open(path)?))
}

impl Tunables {
    fn config(&self) -> CliResult<AtgmConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_reader(open(path)?)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
            None => AtgmConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lambda2 = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.ratio_k {
            cfg.ratio_k = v;
        }
        if let Some(v) = self.rounds {
            cfg.rounds_k0 = Some(v);
        }
        if let Some(c) = self.connectivity {
            cfg.connectivity = match c {
                ConnectivityArg::Complete => Connectivity::Complete,
                ConnectivityArg::Delaunay => Connectivity::Delaunay,
            };
        }
        if self.no_normalize {
            cfg.normalize = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_match(args: &MatchArgs) -> CliResult<()> {
    let cfg = args.tunables.config()?;
    let x = load_points(&args.source)?;
    let y = load_points(&args.target)?;
    let gt = match &args.ground_truth {
        Some(p) => Some(with_path(p, read_matching(open(p)?, x.len(), y.len()))?),
        None => None,
    };
    let mut out = atgm(&x, &y, &cfg)?;
    if let Some(gt) = &gt {
        let acc = accuracy(&out.matching, gt)?;
        out.diagnostics.accuracy = Some(acc);
        eprintln!("accuracy {:.2}%", 100.0 * acc);
    }
    write_matching(create(args.out.as_deref())?, &out.matching)?;
    if let Some(p) = &args.diagnostics {
        let mut w = create(Some(p))?;
        serde_json::to_writer_pretty(&mut w, &out.diagnostics)
            .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::Input(e.to_string()))?;
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let cfg = args.tunables.config()?;
    let (grid, axis) = match args.preset {
        Some(Preset::Table1Noise) => (table1_noise_grid(args.max_n, &cfg), PivotAxis::Sigma),
        Some(Preset::Table1Outliers) => (table1_outlier_grid(args.max_n, &cfg), PivotAxis::OutlierRatio),
        None => {
            let mut grid = Vec::new();
            for &n_in in &args.n_in {
                for &n_out in &args.n_out {
                    for &sigma in &args.sigma {
                        grid.push(SweepCell {
                            n_in,
                            n_out,
                            sigma,
                            config: cfg.clone(),
                        });
                    }
                }
            }
            (grid, PivotAxis::Sigma)
        }
    };
    let opts = SweepOptions {
        trials: args.trials,
        method: match args.method {
            MethodArg::Atgm => Method::Atgm,
            MethodArg::Spectral => Method::Spectral,
        },
        removal_preprocess: args.removal_preprocess,
        seed_base: args.seed,
        timing: !args.no_timing,
    };
    let results = run_sweep(&grid, &opts)?;
    let failed: usize = results.cells.iter().map(|c| c.failed).sum();
    if failed > 0 {
        eprintln!("{failed} trial(s) failed; see the error column");
    }
    let mut w = create(args.out.as_deref())?;
    match args.output {
        OutputFormat::Csv => write_trials_csv(&results, &mut w)?,
        OutputFormat::Json => write_summary_json(&results, &mut w)?,
    }
    w.flush().map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(p) = &args.pivot {
        let mut w = create(Some(p))?;
        write_pivot_csv(&results, axis, &mut w)?;
        w.flush().map_err(|e| Failure::Input(e.to_string()))?;
    }
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> CliResult<()> {
    let cfg = args.tunables.config()?;
    let x = load_points(&args.source)?;
    let y = load_points(&args.target)?;
    let gt = match &args.ground_truth {
        Some(p) => Some(with_path(p, read_matching(open(p)?, x.len(), y.len()))?),
        None => None,
    };
    let matching = spectral_baseline(&x, &y, &cfg, args.removal_preprocess)?;
    if let Some(gt) = &gt {
        eprintln!("accuracy {:.2}%", 100.0 * accuracy(&matching, gt)?);
    }
    write_matching(create(args.out.as_deref())?, &matching)?;
    Ok(())
}

fn cmd_filter(args: &FilterArgs) -> CliResult<()> {
    let cfg = args.tunables.config()?;
    let x = load_points(&args.source)?;
    let y = load_points(&args.target)?;
    let (state, _) = removal_loop(&x, &y, &cfg)?;
    eprintln!("kept {} of {} targets", state.len(), y.len());
    write_points(create(args.out.as_deref())?, &y.select(state.kept()))?;
    if let Some(p) = &args.kept {
        write_indices(create(Some(p))?, state.kept())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Filter(a) => cmd_filter(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(3)
        }
    }
}
