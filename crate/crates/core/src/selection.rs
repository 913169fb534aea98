//! Penalty grid, K-fold cross-validation of the cross-covariance prediction
//! error, the one-standard-error rule, and the rank-selection pipeline.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{cross_products, CrossCovarianceSet, MultiviewDataset, Normalization, ViewMatrix};
use crate::error::{Error, Result};
use crate::model::{estimated_rank_default, fidelity_with_weights, JointLcaModel};
use crate::solver::{first_sweep_group_norms, fit_penalized_from, initialize, refit, FitTrace, SolverOptions};

/// Ratio between the first and last grid values.
const GRID_SPAN: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    /// Fold id of each sample row.
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
}

impl CvPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_assignment.len()).filter(|&r| self.fold_assignment[r] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_assignment.len()).filter(|&r| self.fold_assignment[r] != fold).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub folds: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub normalization: Normalization,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            grid_size: 50,
            seed: 0,
            normalization: Normalization::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub mean_score: Vec<f64>,
    pub se: Vec<f64>,
    /// `fold_scores[λ index][fold]`.
    pub fold_scores: Vec<Vec<f64>>,
    pub optimal_lambda: f64,
    pub chosen_lambda: f64,
    pub chosen_rank: usize,
    pub plan: CvPlan,
}

#[derive(Debug, Clone)]
pub struct RankSelection {
    pub rank: usize,
    pub lambda: f64,
    /// Penalized fit at the chosen `λ` on the full data.
    pub penalized: JointLcaModel,
    /// Unpenalized refit at the selected rank; empty when the rank is 0.
    pub refit: JointLcaModel,
    pub refit_trace: Option<FitTrace>,
    pub cv: CvResult,
}

/// Descending, log-spaced grid from `λ_max` to `λ_max / 1000`, where `λ_max`
/// is the largest group norm at the first threshold step of a fit from the
/// default initialization.
pub fn lambda_grid(ccset: &CrossCovarianceSet, p0: usize, grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::invalid(format!("grid_size must be >= 2, got {grid_size}")));
    }
    let lambda_max = first_sweep_group_norms(ccset, p0)?.into_iter().fold(0.0, f64::max);
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::Numerical(format!(
            "cannot build a penalty grid: largest group norm is {lambda_max}"
        )));
    }
    let last = grid_size - 1;
    Ok((0..grid_size)
        .map(|t| match t {
            0 => lambda_max,
            t if t == last => lambda_max / GRID_SPAN,
            t => lambda_max * GRID_SPAN.powf(-(t as f64) / last as f64),
        })
        .collect())
}

/// Random balanced assignment of `n` rows to `folds` folds.
pub fn split_folds(n: usize, folds: usize, seed: u64) -> Result<CvPlan> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::invalid(format!("{folds} folds need at least {folds} samples, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut fold_assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_assignment[row] = pos % folds;
    }
    Ok(CvPlan {
        folds,
        fold_assignment,
        seed,
    })
}

/// `Σ_{i<j} w_ij ‖V̂_iD̂_iD̂_jV̂_jᵀ − Ŝ_ij^test‖_F²` with externally fixed weights.
pub fn cv_criterion(train_model: &JointLcaModel, test_ccset: &CrossCovarianceSet, weights: &[f64]) -> Result<f64> {
    fidelity_with_weights(train_model, test_ccset, weights)
}

/// Index of the largest `λ` (grid is descending) whose mean score is within
/// one standard error of the minimum. Returns `(chosen, optimal)`.
pub fn one_se_select(mean: &[f64], se: &[f64]) -> Result<(usize, usize)> {
    if mean.is_empty() || mean.len() != se.len() {
        return Err(Error::invalid(format!(
            "need matching nonempty score vectors, got {} means and {} ses",
            mean.len(),
            se.len()
        )));
    }
    let mut opt = 0;
    for (idx, &m) in mean.iter().enumerate() {
        if m < mean[opt] {
            opt = idx;
        }
    }
    let threshold = mean[opt] + se[opt];
    let chosen = mean.iter().position(|&m| m <= threshold).unwrap_or(opt);
    Ok((chosen, opt))
}

/// Centered cross-covariances of a row subset on the scale of the full data:
/// with no normalization the products are multiplied by `n / n_subset`.
fn subset_cross_products(
    dataset: &MultiviewDataset,
    rows: &[usize],
    normalization: Normalization,
) -> Result<Vec<((usize, usize), DMatrix<f64>)>> {
    let subset = dataset.select_rows(rows)?.centered();
    let views: Vec<&DMatrix<f64>> = subset.views().iter().map(ViewMatrix::values).collect();
    let scale = match normalization {
        Normalization::None => dataset.n() as f64 / rows.len() as f64,
        other => other.factor(rows.len()),
    };
    Ok(cross_products(&views, scale))
}

struct Fold {
    train: CrossCovarianceSet,
    test: CrossCovarianceSet,
    init: JointLcaModel,
}

fn prepare_fold(dataset: &MultiviewDataset, plan: &CvPlan, fold: usize, p0: usize, cv: &CvOptions) -> Result<Fold> {
    let dims = dataset.dims();
    let train = CrossCovarianceSet::from_matrices(
        dims.clone(),
        subset_cross_products(dataset, &plan.train_rows(fold), cv.normalization)?,
    )?;
    let test = CrossCovarianceSet::from_matrices_unit_weights(
        dims,
        subset_cross_products(dataset, &plan.test_rows(fold), cv.normalization)?,
    )?;
    let init = initialize(&train, p0)?;
    Ok(Fold { train, test, init })
}

fn mean_and_se(scores: &[f64]) -> (f64, f64) {
    let k = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / k;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Full pipeline: grid on the centered full data, K-fold CV over the grid,
/// one-SE choice of `λ`, penalized fit at that `λ`, and refit at the
/// estimated rank. Each `(fold, λ)` fit starts from the fold's own
/// initialization.
pub fn select_rank(
    dataset: &MultiviewDataset,
    p0: usize,
    cv: &CvOptions,
    opts: &SolverOptions,
) -> Result<RankSelection> {
    opts.validate()?;
    let data = dataset.centered();
    let views: Vec<&DMatrix<f64>> = data.views().iter().map(ViewMatrix::values).collect();
    let ccset = CrossCovarianceSet::from_matrices(data.dims(), cross_products(&views, cv.normalization.factor(data.n())))?;
    let full_weights = ccset.weight_values();
    let lambdas = lambda_grid(&ccset, p0, cv.grid_size)?;
    let plan = split_folds(data.n(), cv.folds, cv.seed)?;

    let folds: Vec<Fold> = (0..cv.folds)
        .into_par_iter()
        .map(|f| prepare_fold(&data, &plan, f, p0, cv))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..lambdas.len()).flat_map(|l| (0..cv.folds).map(move |f| (l, f))).collect();
    let scores: Vec<f64> = tasks
        .par_iter()
        .map(|&(l, f)| {
            let fold = &folds[f];
            let (model, _) = fit_penalized_from(&fold.train, lambdas[l], &fold.init, opts)?;
            cv_criterion(&model, &fold.test, &full_weights)
        })
        .collect::<Result<_>>()?;

    let fold_scores: Vec<Vec<f64>> = scores.chunks(cv.folds).map(<[f64]>::to_vec).collect();
    let (mean_score, se): (Vec<f64>, Vec<f64>) = fold_scores.iter().map(|s| mean_and_se(s)).unzip();
    let (chosen, opt) = one_se_select(&mean_score, &se)?;
    let lambda = lambdas[chosen];

    let init = initialize(&ccset, p0)?;
    let (penalized, _) = fit_penalized_from(&ccset, lambda, &init, opts)?;
    let rank = estimated_rank_default(&penalized);
    let (refit_model, refit_trace) = if rank == 0 {
        (JointLcaModel::empty(&ccset.dims().to_vec(), lambda), None)
    } else {
        let (m, t) = refit(&ccset, rank, &penalized, opts)?;
        (m, Some(t))
    };
    Ok(RankSelection {
        rank,
        lambda,
        penalized,
        refit: refit_model,
        refit_trace,
        cv: CvResult {
            optimal_lambda: lambdas[opt],
            chosen_lambda: lambda,
            chosen_rank: rank,
            lambdas,
            mean_score,
            se,
            fold_scores,
            plan,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let plan = split_folds(10, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(plan.test_rows(f).len(), 2);
        }
        let plan = split_folds(11, 5, 3).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| plan.test_rows(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(plan, split_folds(11, 5, 3).unwrap());
        assert!(split_folds(4, 5, 0).is_err());
    }

    #[test]
    fn one_se_examples() {
        assert_eq!(one_se_select(&[1.0, 1.0, 1.0], &[0.0; 3]).unwrap().0, 0);
        assert_eq!(one_se_select(&[3.0, 2.0, 1.0], &[0.0; 3]).unwrap(), (2, 2));
        assert_eq!(one_se_select(&[5.0, 3.0, 2.9], &[0.0, 0.0, 0.2]).unwrap(), (1, 2));
        assert!(one_se_select(&[], &[]).is_err());
    }

    #[test]
    fn se_uses_sample_sd() {
        let (m, se) = mean_and_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grid_endpoints() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let cc = CrossCovarianceSet::from_matrices_unit_weights(vec![2, 2], vec![((0, 1), s)]).unwrap();
        let grid = lambda_grid(&cc, 2, 2).unwrap();
        assert_eq!(grid.len(), 2);
        assert!((grid[0] - 2.0).abs() < 1e-12);
        assert_eq!(grid[1], grid[0] / 1000.0);
        let grid = lambda_grid(&cc, 2, 7).unwrap();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
        assert!(lambda_grid(&cc, 2, 1).is_err());
    }
}
