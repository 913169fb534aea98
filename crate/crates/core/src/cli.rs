//! Command-line interface: argument parsing, JSON run configs, and the
//! file outputs of each subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{
    cross_covariances, load_view_csv, write_matrix_csv, CsvOptions, MultiviewDataset, Normalization, ViewMatrix,
};
use crate::error::{Error, Result};
use crate::metrics::{results_csv, run_benchmark, timing_csv, BenchmarkOptions};
use crate::model::{compute_scores, estimated_rank_default, JointLcaModel};
use crate::oracles::run_self_checks;
use crate::selection::{select_rank, CvOptions};
use crate::simulation::{generate, study_grid, SimCase, SimConfig};
use crate::solver::{fit_penalized, SolverOptions};

#[derive(Debug, Parser)]
#[command(name = "jointlca", version, about = "Joint linked component analysis for multiview data")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for simulation, fold assignment and benchmarks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: one CSV per view plus truth.json.
    Simulate(SimArgs),
    /// Fit the penalized model at one λ: model.json and trace.json.
    Fit(FitArgs),
    /// Cross-validated rank selection and refit: cv.json and model_refit.json.
    SelectRank(SelectArgs),
    /// Simulation study: benchmark_results.csv, benchmark_summary.json, benchmark_timing.csv.
    Benchmark(BenchArgs),
    /// Averaged component scores of a fitted model: scores.csv.
    Scores(ScoresArgs),
    /// Compare solver steps with brute-force oracles: oracle-report.json.
    OracleCheck,
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    /// View CSV files, one per view (rows are samples).
    #[arg(long, num_args = 1..)]
    pub views: Vec<PathBuf>,
    /// Skip the first row of every CSV.
    #[arg(long)]
    pub header: bool,
    /// Field delimiter (default: comma).
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Cross-product scaling (default: none).
    #[arg(long, value_enum)]
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    /// Initial component count (default: smallest view dimension).
    #[arg(long)]
    pub p0: Option<usize>,
    /// Iteration cap for the alternating solver.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop when the relative change of the fitted cross-covariances falls below this.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Coordinate passes per scale update.
    #[arg(long)]
    pub d_inner_iters: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SimArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated view dimensions, e.g. 100,100,100.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Number of shared components.
    #[arg(long)]
    pub r0: Option<usize>,
    /// Individual components per view.
    #[arg(long)]
    pub r_indiv: Option<usize>,
    /// I or II.
    #[arg(long)]
    pub case: Option<String>,
    /// Omit the noise term.
    #[arg(long)]
    pub noiseless: bool,
    /// Draw individual loadings orthogonal to the shared ones.
    #[arg(long)]
    pub orthogonal_individual: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Penalty level.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Number of log-spaced λ values.
    #[arg(long)]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// The full 32-cell study grid.
    Full,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Run a predefined grid of simulation cells instead of a single cell.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Replications per cell.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Number of log-spaced λ values.
    #[arg(long)]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoresArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model JSON written by `fit` or `select-rank`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Everything a JSON config may set. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub views: Vec<PathBuf>,
    pub has_header: bool,
    pub delimiter: Option<char>,
    pub normalization: Option<Normalization>,
    pub lambda: Option<f64>,
    pub p0: Option<usize>,
    pub folds: Option<usize>,
    pub grid_size: Option<usize>,
    pub solver: Option<SolverOptions>,
    pub simulation: Option<SimConfig>,
    pub grid: Vec<SimConfig>,
    pub preset: Option<Preset>,
    pub replications: Option<usize>,
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

/// Resolved global settings.
struct Context {
    config: RunConfig,
    seed: u64,
    out_dir: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn solver(&self, args: &SolverArgs) -> Result<SolverOptions> {
        let mut opts = self.config.solver.clone().unwrap_or_default();
        opts.seed = self.seed;
        if let Some(v) = args.max_iters {
            opts.max_iters = v;
        }
        if let Some(v) = args.rel_tol {
            opts.rel_tol = v;
        }
        if let Some(v) = args.d_inner_iters {
            opts.d_inner_iters = v;
        }
        opts.validate()?;
        Ok(opts)
    }

    fn p0(&self, args: &SolverArgs) -> Option<usize> {
        args.p0.or(self.config.p0)
    }

    fn normalization(&self, input: &InputArgs) -> Normalization {
        input.normalization.or(self.config.normalization).unwrap_or_default()
    }

    fn cv(&self, folds: Option<usize>, grid_size: Option<usize>, normalization: Normalization) -> CvOptions {
        let defaults = CvOptions::default();
        CvOptions {
            folds: folds.or(self.config.folds).unwrap_or(defaults.folds),
            grid_size: grid_size.or(self.config.grid_size).unwrap_or(defaults.grid_size),
            seed: self.seed,
            normalization,
        }
    }

    /// Reads the views, checking row counts pairwise so that a mismatch names
    /// both files.
    fn load_views(&self, input: &InputArgs) -> Result<MultiviewDataset> {
        let paths = if input.views.is_empty() { &self.config.views } else { &input.views };
        if paths.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 view files, got {}", paths.len())));
        }
        let delimiter = input.delimiter.or(self.config.delimiter).unwrap_or(',');
        if !delimiter.is_ascii() {
            return Err(Error::invalid(format!("delimiter must be ASCII, got {delimiter:?}")));
        }
        let opts = CsvOptions {
            delimiter: delimiter as u8,
            has_header: input.header || self.config.has_header,
        };
        let views: Vec<ViewMatrix> = paths
            .iter()
            .enumerate()
            .map(|(i, p)| load_view_csv(p, &opts, i))
            .collect::<Result<_>>()?;
        for (i, view) in views.iter().enumerate().skip(1) {
            if view.nrows() != views[0].nrows() {
                return Err(Error::dimension(format!(
                    "{} has {} rows but {} has {} rows",
                    paths[0].display(),
                    views[0].nrows(),
                    paths[i].display(),
                    view.nrows()
                )));
            }
        }
        MultiviewDataset::from_views(views)
    }

    fn sim_config(&self, args: &SimArgs) -> Result<SimConfig> {
        let mut cfg = self.config.simulation.clone().unwrap_or(SimConfig {
            n: 100,
            dims: vec![100, 100, 100],
            r0: 2,
            r_indiv: 1,
            case: SimCase::I,
            seed: 0,
            noiseless: false,
            orthogonal_individual: false,
        });
        if let Some(n) = args.n {
            cfg.n = n;
        }
        if let Some(dims) = &args.dims {
            cfg.dims = dims.clone();
        }
        if let Some(r0) = args.r0 {
            cfg.r0 = r0;
        }
        if let Some(ri) = args.r_indiv {
            cfg.r_indiv = ri;
        }
        if let Some(case) = &args.case {
            cfg.case = case.parse()?;
        }
        cfg.noiseless |= args.noiseless;
        cfg.orthogonal_individual |= args.orthogonal_individual;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_p0(dataset: &MultiviewDataset, p0: Option<usize>) -> usize {
    p0.unwrap_or_else(|| dataset.dims().into_iter().min().unwrap_or(1))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

/// Parses the arguments, runs the command and returns the process exit code:
/// 0 on success, 1 on a computational failure, 2 on invalid input.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(config.threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be >= 1"));
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let ctx = Context {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        out_dir: cli.out_dir.clone().or(config.out_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        config,
    };
    fs::create_dir_all(&ctx.out_dir).map_err(|e| Error::io(&ctx.out_dir, e))?;

    match &cli.command {
        Command::Simulate(args) => simulate(&ctx, args),
        Command::Fit(args) => fit(&ctx, args),
        Command::SelectRank(args) => select(&ctx, args),
        Command::Benchmark(args) => benchmark(&ctx, args),
        Command::Scores(args) => scores(&ctx, args),
        Command::OracleCheck => oracle_check(&ctx),
    }
}

fn simulate(ctx: &Context, args: &SimArgs) -> Result<i32> {
    let cfg = ctx.sim_config(args)?;
    let (data, truth) = generate(&cfg)?;
    for (i, view) in data.views().iter().enumerate() {
        write_matrix_csv(&ctx.out(&format!("view_{}.csv", i + 1)), view.values())?;
    }
    ctx.write("truth.json", &to_json(&truth.to_document(&cfg)))?;
    println!(
        "wrote {} views ({} x {:?}) and truth.json to {}",
        data.num_views(),
        data.n(),
        data.dims(),
        ctx.out_dir.display()
    );
    Ok(0)
}

fn fit(ctx: &Context, args: &FitArgs) -> Result<i32> {
    let lambda = args
        .lambda
        .or(ctx.config.lambda)
        .ok_or_else(|| Error::invalid("fit needs --lambda (or \"lambda\" in the config)"))?;
    let opts = ctx.solver(&args.solver)?;
    let data = ctx.load_views(&args.input)?.centered();
    let ccset = cross_covariances(&data, ctx.normalization(&args.input))?;
    let p0 = default_p0(&data, ctx.p0(&args.solver));
    let (model, trace) = fit_penalized(&ccset, lambda, p0, &opts)?;
    let rank = estimated_rank_default(&model);
    ctx.write("model.json", &(model.truncated(rank).to_json() + "\n"))?;
    ctx.write("trace.json", &to_json(&trace))?;
    println!("estimated rank: {rank}");
    Ok(0)
}

fn select(ctx: &Context, args: &SelectArgs) -> Result<i32> {
    let opts = ctx.solver(&args.solver)?;
    let data = ctx.load_views(&args.input)?;
    let cv = ctx.cv(args.folds, args.grid_size, ctx.normalization(&args.input));
    let p0 = default_p0(&data, ctx.p0(&args.solver));
    let sel = select_rank(&data, p0, &cv, &opts)?;
    ctx.write("cv.json", &to_json(&sel.cv))?;
    ctx.write("model_refit.json", &(sel.refit.to_json() + "\n"))?;
    println!("selected rank: {}", sel.rank);
    println!("selected lambda: {}", sel.lambda);
    Ok(0)
}

fn benchmark(ctx: &Context, args: &BenchArgs) -> Result<i32> {
    let grid = match args.preset.or(ctx.config.preset) {
        Some(Preset::Full) => study_grid(),
        None if !ctx.config.grid.is_empty() => ctx.config.grid.clone(),
        None => vec![ctx.sim_config(&args.sim)?],
    };
    let normalization = ctx.config.normalization.unwrap_or_default();
    let opts = BenchmarkOptions {
        replications: args.replications.or(ctx.config.replications).unwrap_or(20),
        master_seed: ctx.seed,
        p0: ctx.p0(&args.solver),
        cv: ctx.cv(args.folds, args.grid_size, normalization),
        solver: ctx.solver(&args.solver)?,
    };
    let report = run_benchmark(&grid, &opts)?;
    ctx.write("benchmark_results.csv", &results_csv(&report.records)?)?;
    ctx.write("benchmark_timing.csv", &timing_csv(&report.records)?)?;
    ctx.write("benchmark_summary.json", &to_json(&report.summary))?;
    for cell in &report.summary.cells {
        println!(
            "{}: accuracy {} ({} failures), median subspace error {}",
            cell.config_id,
            cell.accuracy,
            cell.failures,
            cell.subspace_error.as_ref().map_or("n/a".to_string(), |q| q.median.to_string())
        );
    }
    Ok(0)
}

fn scores(ctx: &Context, args: &ScoresArgs) -> Result<i32> {
    let path = args
        .model
        .clone()
        .or(ctx.config.model.clone())
        .ok_or_else(|| Error::invalid("scores needs --model"))?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let model = JointLcaModel::from_json(&text)?;
    let data = ctx.load_views(&args.input)?.centered();
    let u: DMatrix<f64> = compute_scores(&data, &model)?;
    write_matrix_csv(&ctx.out("scores.csv"), &u)?;
    println!("wrote {} x {} scores", u.nrows(), u.ncols());
    Ok(0)
}

fn oracle_check(ctx: &Context) -> Result<i32> {
    let reports = run_self_checks(ctx.seed)?;
    ctx.write("oracle-report.json", &to_json(&reports))?;
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
    println!("{} of {} oracle checks passed", reports.len() - failed.len(), reports.len());
    for r in &failed {
        println!("FAIL {} ({}): discrepancy {} > {}", r.name, r.instance, r.discrepancy, r.tolerance);
    }
    Ok(if failed.is_empty() { 0 } else { 1 })
}
