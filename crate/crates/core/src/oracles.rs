//! Brute-force reference computations used to check the solver. None of the
//! oracle functions call solver code; [`run_self_checks`] pairs each oracle
//! with the corresponding solver output.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{pair_list, pair_position, CrossCovarianceSet};
use crate::error::{Error, Result};
use crate::model::fidelity;
use crate::solver::{initialize, orthogonal_procrustes, refit, update_sigma_group, SolverOptions};

/// Largest dimension accepted by the multi-start oracle.
pub const ORACLE_MAX_DIM: usize = 8;

const POWER_MAX_ITERS: usize = 1_000_000;
const GOLDEN_MAX_ITERS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub instance: String,
    pub oracle_value: f64,
    pub solver_value: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    fn new(name: &str, instance: String, oracle_value: f64, solver_value: f64, discrepancy: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            instance,
            oracle_value,
            solver_value,
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
        }
    }
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Flips `v` so its largest-magnitude entry is positive; returns the sign used.
fn sign_normalize(v: &mut DVector<f64>) -> f64 {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
        -1.0
    } else {
        1.0
    }
}

/// Top singular triple of `S12` by power iteration on `S12 S12ᵀ`:
/// the maximizer of `v1ᵀ S12 v2` over unit vectors.
pub fn diag_cca_r1_oracle(s12: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    if s12.iter().all(|&x| x == 0.0) || s12.is_empty() {
        return Err(Error::invalid("diagonalized-CCA oracle needs a nonzero matrix"));
    }
    // Start from the largest column plus a fixed irregular perturbation so the
    // start is not orthogonal to the top direction by construction.
    let best_col = (0..s12.ncols())
        .max_by(|&a, &b| s12.column(a).norm().total_cmp(&s12.column(b).norm()))
        .expect("nonempty");
    let scale = s12.column(best_col).norm();
    let mut v1 = unit(DVector::from_fn(s12.nrows(), |i, _| {
        s12[(i, best_col)] + 1e-3 * scale * ((i as f64 + 1.0) * 0.7548776662).sin()
    }));
    for _ in 0..POWER_MAX_ITERS {
        let next = unit(s12 * s12.tr_mul(&v1));
        let change = (&next - &v1).amax();
        v1 = next;
        if change < 1e-15 {
            break;
        }
    }
    let mut v2 = unit(s12.tr_mul(&v1));
    let flip = sign_normalize(&mut v1);
    v2 *= flip;
    let value = v1.dot(&(s12 * &v2));
    Ok((v1, v2, value))
}

/// Largest `v1ᵀ S12 v2` over `samples` random unit-vector pairs; a lower
/// bound that the power-iteration value must dominate.
pub fn sampled_bilinear_max(s12: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let a = unit(DVector::from_fn(s12.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal)));
        let b = unit(DVector::from_fn(s12.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal)));
        best = best.max(a.dot(&(s12 * b)).abs());
    }
    best
}

/// `Σ_{i<j} (v_iᵀ S_ij v_j)²`.
pub fn ssqcov_value(pairs: &[DMatrix<f64>], v: &[DVector<f64>]) -> f64 {
    pair_list(v.len())
        .into_iter()
        .zip(pairs)
        .map(|((i, j), s)| v[i].dot(&(s * &v[j])).powi(2))
        .sum()
}

/// Maximizes `Σ_{i<j} (v_iᵀ S_ij v_j)²` over unit vectors by block ascent:
/// each `v_i` becomes the top eigenvector of `Σ_j S_ij v_j v_jᵀ S_ijᵀ`. The
/// best of `restarts` random starts is returned. `pairs` are in canonical
/// order `(0,1), (0,2), …`.
pub fn ssqcov_r1_oracle(
    dims: &[usize],
    pairs: &[DMatrix<f64>],
    restarts: usize,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, f64)> {
    let views = dims.len();
    if views < 2 || pairs.len() != views * (views - 1) / 2 {
        return Err(Error::invalid(format!("{} pair matrices for {views} views", pairs.len())));
    }
    if dims.iter().any(|&p| p == 0 || p > ORACLE_MAX_DIM) {
        return Err(Error::invalid(format!(
            "oracle dimensions must be in 1..={ORACLE_MAX_DIM}, got {dims:?}"
        )));
    }
    for ((i, j), s) in pair_list(views).into_iter().zip(pairs) {
        if s.shape() != (dims[i], dims[j]) {
            return Err(Error::dimension(format!("pair ({i}, {j}) has shape {:?}", s.shape())));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<DVector<f64>>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let mut v: Vec<DVector<f64>> = dims
            .iter()
            .map(|&p| unit(DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))))
            .collect();
        let mut value = ssqcov_value(pairs, &v);
        for _ in 0..10_000 {
            for i in 0..views {
                let mut a = DMatrix::zeros(dims[i], dims[i]);
                for j in (0..views).filter(|&j| j != i) {
                    let t = if i < j {
                        &pairs[pair_position(i, j, views)] * &v[j]
                    } else {
                        pairs[pair_position(j, i, views)].tr_mul(&v[j])
                    };
                    a += &t * t.transpose();
                }
                let eig = SymmetricEigen::new(a);
                let top = (0..dims[i])
                    .max_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]))
                    .expect("nonempty");
                v[i] = eig.eigenvectors.column(top).into_owned();
            }
            let next = ssqcov_value(pairs, &v);
            let done = next - value <= 1e-15 * next.abs().max(1e-300);
            value = next;
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((v, value));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Golden-section minimization over `t ∈ [0, ‖y‖]` of
/// `½‖y − t·y/‖y‖‖² + λt`, returning `t·y/‖y‖`. Two points are compared
/// through their factored objective difference, which keeps the search
/// accurate to rounding level instead of the square root of it.
pub fn prox_oracle(y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; y.len()]);
    }
    let dir: Vec<f64> = y.iter().map(|v| v / norm).collect();
    // f(a) − f(b), summed entrywise.
    let diff = |a: f64, b: f64| -> f64 {
        let fit: f64 = y
            .iter()
            .zip(&dir)
            .map(|(yi, ui)| 0.5 * (b - a) * ui * (2.0 * yi - (a + b) * ui))
            .sum();
        fit + lambda * (a - b)
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, norm);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    for _ in 0..GOLDEN_MAX_ITERS {
        if hi - lo <= 1e-16 * norm {
            break;
        }
        if diff(x1, x2) <= 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - ratio * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + ratio * (hi - lo);
        }
    }
    // The endpoint t = 0 is the exact zero group when it is no worse.
    let mut t = 0.5 * (lo + hi);
    if diff(0.0, t) <= 0.0 {
        t = 0.0;
    }
    Ok(dir.iter().map(|u| t * u).collect())
}

/// Angle between the lines spanned by `a` and `b`.
pub fn principal_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let c = (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0);
    c.acos()
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    gaussian_matrix(rows, cols, rng).qr().q()
}

fn tight_options() -> SolverOptions {
    SolverOptions {
        max_iters: 100_000,
        rel_tol: 1e-15,
        ..Default::default()
    }
}

/// Prox check: weighted group threshold vs golden-section search in the
/// `√w`-scaled coordinates, including an instance on the boundary `‖Y‖ = λ`.
pub fn check_prox(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(instances);
    for t in 0..instances {
        let len = rng.random_range(1..=6);
        let s: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.2..3.0)).collect();
        let y: Vec<f64> = s.iter().zip(&w).map(|(si, wi)| wi.sqrt() * si).collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lambda = if t == 0 { norm } else { rng.random_range(0.0..1.5) * norm };
        let sigma = update_sigma_group(0, &s, &w, lambda);
        let solver: Vec<f64> = sigma.values.iter().zip(&w).map(|(v, wi)| wi.sqrt() * v).collect();
        let oracle = prox_oracle(&y, lambda)?;
        let gap = solver.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        reports.push(OracleReport::new(
            "prox",
            format!("len {len}, ‖Y‖ {norm:.6}, λ {lambda:.6}"),
            oracle.iter().map(|v| v * v).sum::<f64>().sqrt(),
            solver.iter().map(|v| v * v).sum::<f64>().sqrt(),
            gap,
            1e-8,
        ));
    }
    Ok(reports)
}

/// Procrustes check: the solver's objective against the best of `candidates`
/// random orthonormal matrices on random `4×3` / `2×3` instances.
pub fn check_procrustes(instances: usize, candidates: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(instances);
    for _ in 0..instances {
        let a = gaussian_matrix(4, 3, &mut rng);
        let b = gaussian_matrix(2, 3, &mut rng);
        let v = orthogonal_procrustes(&a, &b)?;
        let solver = (&a - &v * &b).norm();
        let best = (0..candidates)
            .map(|_| (&a - random_orthonormal(4, 2, &mut rng) * &b).norm())
            .fold(f64::INFINITY, f64::min);
        reports.push(OracleReport::new(
            "procrustes",
            "random 4x3 A, 2x3 B".into(),
            best,
            solver,
            (solver - best).max(0.0),
            0.0,
        ));
    }
    Ok(reports)
}

/// Two-view rank-1 refit with unit weights against the top singular triple.
/// Reports the larger of `|d₁d₂ − σ_max|/1e-5` and `angle/1e-2` as the
/// discrepancy, so tolerance 1 means both bounds hold.
pub fn check_diag_cca(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(instances);
    for _ in 0..instances {
        let s = gaussian_matrix(5, 4, &mut rng);
        let (v1, _, value) = diag_cca_r1_oracle(&s)?;
        let cc = CrossCovarianceSet::from_matrices_unit_weights(vec![5, 4], vec![((0, 1), s)])?;
        let init = initialize(&cc, 1)?;
        let (fit, _) = refit(&cc, 1, &init, &tight_options())?;
        let product = fit.scale(0, 0) * fit.scale(1, 0);
        let v_hat = fit.loadings()[0].as_matrix().column(0).into_owned();
        let angle = principal_angle(&v_hat, &v1);
        let gap = (product - value).abs();
        reports.push(OracleReport::new(
            "diag_cca_r1",
            format!("random 5x4, angle {angle:.3e}, |d1d2 - s1| {gap:.3e}"),
            value,
            product,
            (gap / 1e-5).max(angle / 1e-2),
            1.0,
        ));
    }
    Ok(reports)
}

/// Three-view rank-1 refit with unit weights: at convergence every pair
/// satisfies `d_i d_j = ⟨Ŝ_ij, v_i v_jᵀ⟩`. Also reports how the refit fidelity
/// compares with `Σ‖Ŝ_ij‖² − max SSQCOV` from the multi-start oracle.
pub fn check_stationarity(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(2 * instances);
    for _ in 0..instances {
        let dims: Vec<usize> = (0..3).map(|_| rng.random_range(3..=6)).collect();
        // A dominant shared rank-1 part keeps the optimal inner products positive.
        let u: Vec<DVector<f64>> = dims
            .iter()
            .map(|&p| unit(DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))))
            .collect();
        let mats: Vec<((usize, usize), DMatrix<f64>)> = pair_list(3)
            .into_iter()
            .map(|(i, j)| {
                let signal = &u[i] * u[j].transpose() * 3.0;
                ((i, j), signal + gaussian_matrix(dims[i], dims[j], &mut rng) * 0.3)
            })
            .collect();
        let pairs: Vec<DMatrix<f64>> = mats.iter().map(|(_, m)| m.clone()).collect();
        let cc = CrossCovarianceSet::from_matrices_unit_weights(dims.clone(), mats)?;
        let init = initialize(&cc, 1)?;
        let (fit, _) = refit(&cc, 1, &init, &tight_options())?;
        let v: Vec<DVector<f64>> = fit.loadings().iter().map(|l| l.as_matrix().column(0).into_owned()).collect();
        let worst = pair_list(3)
            .into_iter()
            .zip(&pairs)
            .map(|((i, j), s)| (fit.scale(i, 0) * fit.scale(j, 0) - v[i].dot(&(s * &v[j]))).abs())
            .fold(0.0, f64::max);
        reports.push(OracleReport::new(
            "stationarity_r1",
            format!("three views, dims {dims:?}"),
            0.0,
            worst,
            worst,
            1e-6,
        ));

        let (_, best) = ssqcov_r1_oracle(&dims, &pairs, 100, rng.random())?;
        let total: f64 = pairs.iter().map(DMatrix::norm_squared).sum();
        let fid = fidelity(&fit, &cc)?;
        reports.push(OracleReport::new(
            "ssqcov_r1",
            format!("three views, dims {dims:?}"),
            total - best,
            fid,
            (fid - (total - best)).abs(),
            1e-4,
        ));
    }
    Ok(reports)
}

/// Every oracle comparison at its default instance count.
pub fn run_self_checks(seed: u64) -> Result<Vec<OracleReport>> {
    let mut reports = check_prox(50, seed)?;
    reports.extend(check_procrustes(20, 10_000, seed.wrapping_add(1))?);
    reports.extend(check_diag_cca(10, seed.wrapping_add(2))?);
    reports.extend(check_stationarity(5, seed.wrapping_add(3))?);
    Ok(reports)
}
