//! Evaluation metrics and the simulation benchmark harness.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{select_rank, CvOptions};
use crate::simulation::{derive_seed, generate, SimConfig};
use crate::solver::SolverOptions;

/// `Σ_i ‖V_iV_iᵀ − V̂_iV̂_iᵀ‖_F² / (I ‖V_iV_iᵀ‖_F²)`, computed from `r×r`
/// Gram products. `estimates[i]` may have any number of columns.
pub fn subspace_error(estimates: &[DMatrix<f64>], truths: &[DMatrix<f64>]) -> Result<f64> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return Err(Error::dimension(format!(
            "{} estimates for {} true loadings",
            estimates.len(),
            truths.len()
        )));
    }
    let views = truths.len() as f64;
    let mut total = 0.0;
    for (i, (est, truth)) in estimates.iter().zip(truths).enumerate() {
        if est.nrows() != truth.nrows() {
            return Err(Error::dimension(format!(
                "view {i}: estimate has {} rows, truth has {}",
                est.nrows(),
                truth.nrows()
            )));
        }
        let tt = truth.tr_mul(truth).norm_squared();
        if tt == 0.0 {
            return Err(Error::invalid(format!("view {i}: true loadings are empty")));
        }
        let ee = est.tr_mul(est).norm_squared();
        let et = est.tr_mul(truth).norm_squared();
        total += (ee + tt - 2.0 * et).max(0.0) / (views * tt);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub config_id: String,
    pub replication: usize,
    pub seed: u64,
    pub true_rank: usize,
    pub estimated_rank: Option<usize>,
    pub subspace_error: Option<f64>,
    pub lambda: Option<f64>,
    /// `ok`, or `error: <message>` for a failed replication.
    pub status: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl BenchmarkRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn is_correct(&self) -> bool {
        self.estimated_rank == Some(self.true_rank)
    }
}

/// Fraction of records whose estimated rank equals the true rank. Failed
/// replications count as incorrect.
pub fn rank_accuracy(records: &[BenchmarkRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records"));
    }
    Ok(records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    pub replications: usize,
    pub master_seed: u64,
    /// Initial component count; the smallest view dimension when absent.
    pub p0: Option<usize>,
    pub cv: CvOptions,
    pub solver: SolverOptions,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            replications: 20,
            master_seed: 0,
            p0: None,
            cv: CvOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Five-number summary with type-7 (linear interpolation) quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub config_id: String,
    pub config: SimConfig,
    pub replications: usize,
    pub failures: usize,
    pub accuracy: f64,
    /// `(rank, count)` over successful replications, ascending by rank.
    pub rank_counts: Vec<(usize, usize)>,
    pub subspace_error: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub master_seed: u64,
    pub replications: usize,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub records: Vec<BenchmarkRecord>,
    pub summary: BenchmarkSummary,
}

/// One replication: generate, select the rank, score against the truth.
fn run_replication(config: &SimConfig, cell: usize, replication: usize, opts: &BenchmarkOptions) -> BenchmarkRecord {
    let seed = derive_seed(opts.master_seed, &[cell as u64, replication as u64]);
    let start = Instant::now();
    let outcome = (|| {
        let cfg = SimConfig { seed, ..config.clone() };
        let (data, truth) = generate(&cfg)?;
        let p0 = opts.p0.unwrap_or_else(|| *cfg.dims.iter().min().expect("validated"));
        let cv = CvOptions { seed, ..opts.cv.clone() };
        let sel = select_rank(&data, p0, &cv, &opts.solver)?;
        let estimates: Vec<DMatrix<f64>> = sel.refit.loadings().iter().map(|l| l.as_matrix().clone()).collect();
        let err = subspace_error(&estimates, &truth.loadings)?;
        Ok::<_, Error>((sel.rank, err, sel.lambda))
    })();
    let wall_time_secs = start.elapsed().as_secs_f64();
    let base = BenchmarkRecord {
        config_id: config.id(),
        replication,
        seed,
        true_rank: config.r0,
        estimated_rank: None,
        subspace_error: None,
        lambda: None,
        status: "ok".into(),
        wall_time_secs,
    };
    match outcome {
        Ok((rank, err, lambda)) => BenchmarkRecord {
            estimated_rank: Some(rank),
            subspace_error: Some(err),
            lambda: Some(lambda),
            ..base
        },
        Err(e) => BenchmarkRecord {
            status: format!("error: {e}"),
            ..base
        },
    }
}

/// Runs every `(cell, replication)` pair in parallel on the current rayon
/// pool. Replication seeds derive from the master seed and the pair indices,
/// so results do not depend on scheduling.
pub fn run_benchmark(grid: &[SimConfig], opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    if opts.replications == 0 {
        return Err(Error::invalid("replications must be >= 1"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("benchmark grid is empty"));
    }
    for config in grid {
        config.validate()?;
    }
    opts.solver.validate()?;
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..opts.replications).map(move |r| (c, r)))
        .collect();
    let records: Vec<BenchmarkRecord> = tasks
        .par_iter()
        .map(|&(c, r)| run_replication(&grid[c], c, r, opts))
        .collect();
    let summary = summarize(grid, &records, opts)?;
    Ok(BenchmarkReport { records, summary })
}

pub fn summarize(grid: &[SimConfig], records: &[BenchmarkRecord], opts: &BenchmarkOptions) -> Result<BenchmarkSummary> {
    let cells = grid
        .iter()
        .enumerate()
        .map(|(c, config)| {
            let cell: Vec<BenchmarkRecord> = records
                .iter()
                .skip(c * opts.replications)
                .take(opts.replications)
                .cloned()
                .collect();
            let errors: Vec<f64> = cell.iter().filter_map(|r| r.subspace_error).collect();
            let mut rank_counts: Vec<(usize, usize)> = Vec::new();
            for rank in cell.iter().filter_map(|r| r.estimated_rank) {
                match rank_counts.iter_mut().find(|(r, _)| *r == rank) {
                    Some(entry) => entry.1 += 1,
                    None => rank_counts.push((rank, 1)),
                }
            }
            rank_counts.sort_unstable();
            Ok(CellSummary {
                config_id: config.id(),
                config: config.clone(),
                replications: cell.len(),
                failures: cell.iter().filter(|r| !r.is_ok()).count(),
                accuracy: rank_accuracy(&cell)?,
                rank_counts,
                subspace_error: Quartiles::from_values(&errors),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkSummary {
        master_seed: opts.master_seed,
        replications: opts.replications,
        cells,
    })
}

/// `benchmark_results.csv`: one row per record, no timing column so that
/// reruns are byte-identical.
pub fn results_csv(records: &[BenchmarkRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for record in records {
        writer
            .serialize(record)
            .map_err(|e| Error::invalid(format!("serializing benchmark record: {e}")))?;
    }
    finish_csv(writer)
}

/// `benchmark_timing.csv`: wall time per replication.
pub fn timing_csv(records: &[BenchmarkRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let header = ["config_id", "replication", "wall_time_secs"];
    writer.write_record(header).map_err(|e| Error::invalid(e.to_string()))?;
    for r in records {
        writer
            .write_record([r.config_id.clone(), r.replication.to_string(), r.wall_time_secs.to_string()])
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish_csv(writer)
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}
