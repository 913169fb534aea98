//! Scale-side updates: rotated diagonals, the group threshold on `σ_k`, and
//! the coordinate updates of `d_ik`.

use nalgebra::DMatrix;

use super::Problem;
use crate::data::{pair_position, CrossCovarianceSet};
use crate::error::Result;
use crate::model::{JointLcaModel, SigmaGroup};

/// Diagonals of `S̃_ij = V_iᵀ Ŝ_ij V_j` for every pair (canonical order), each
/// of length `r`.
pub fn rotated_diag(ccset: &CrossCovarianceSet, model: &JointLcaModel) -> Result<Vec<Vec<f64>>> {
    let problem = Problem::new(ccset);
    problem.check_model(model)?;
    let v: Vec<DMatrix<f64>> = model.loadings().iter().map(|l| l.as_matrix().clone()).collect();
    let all: Vec<usize> = (0..model.rank()).collect();
    Ok(rotated_diag_for(&problem, &v, &all))
}

/// Rotated diagonals restricted to `components`; other entries are 0.
pub(crate) fn rotated_diag_for(problem: &Problem<'_>, v: &[DMatrix<f64>], components: &[usize]) -> Vec<Vec<f64>> {
    let r = v[0].ncols();
    problem
        .pairs
        .iter()
        .map(|&(i, j)| {
            let mut diag = vec![0.0; r];
            if components.is_empty() {
                return diag;
            }
            let vj = v[j].select_columns(components.iter());
            let t = problem.times_loading(i, j, &vj);
            for (col, &k) in components.iter().enumerate() {
                diag[k] = v[i].column(k).dot(&t.column(col));
            }
            diag
        })
        .collect()
}

/// Group threshold for component `k`. With `Y_k = (√w_ij (S̃_ij)_kk)`, returns
/// `σ_ijk = (1 − λ/‖Y_k‖)₊ (S̃_ij)_kk`, exactly zero when `‖Y_k‖ ≤ λ`.
pub fn update_sigma_group(k: usize, y: &[f64], weights: &[f64], lambda: f64) -> SigmaGroup {
    debug_assert_eq!(y.len(), weights.len());
    let norm = y
        .iter()
        .zip(weights)
        .map(|(s, w)| w * s * s)
        .sum::<f64>()
        .sqrt();
    let values = if norm <= lambda || norm == 0.0 {
        vec![0.0; y.len()]
    } else {
        let shrink = 1.0 - lambda / norm;
        y.iter().map(|s| shrink * s).collect()
    };
    SigmaGroup { k, values }
}

/// Coordinate update of `d_ik` with all other `d_jk` fixed:
/// `Σ_j ω_ij d_jk σ̂_ijk / Σ_j ω_ij d_jk²`, or 0 when the numerator is not
/// positive or the denominator vanishes. `ω_ij = w_ij` when `weighted`,
/// otherwise 1.
pub fn update_d_coordinate(
    i: usize,
    sigma_hat: &SigmaGroup,
    d_current: &[f64],
    weights: &[f64],
    weighted: bool,
) -> f64 {
    let views = d_current.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &dj) in d_current.iter().enumerate() {
        if j == i {
            continue;
        }
        let p = if i < j { pair_position(i, j, views) } else { pair_position(j, i, views) };
        let w = if weighted { weights[p] } else { 1.0 };
        num += w * dj * sigma_hat.values[p];
        den += w * dj * dj;
    }
    if num > 0.0 && den != 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Exact minimizer over `d_ik ≥ 0` of the penalized objective restricted to
/// component `k`:
/// `Σ_j w_ij (s_ij − d d_jk)² + penalty · sqrt(Σ_{pairs} w σ²)`.
/// The restriction is convex in `d`, so this step never increases the objective.
pub(crate) fn exact_penalized_coordinate(i: usize, s: &[f64], d_col: &[f64], weights: &[f64], penalty: f64) -> f64 {
    let views = d_col.len();
    let mut a = 0.0;
    let mut b = 0.0;
    let mut rest = 0.0;
    for (p, (u, v)) in crate::data::pair_list(views).into_iter().enumerate() {
        let w = weights[p];
        if u == i || v == i {
            let other = if u == i { d_col[v] } else { d_col[u] };
            a += w * other * other;
            b += w * other * s[p];
        } else {
            let sigma = d_col[u] * d_col[v];
            rest += w * sigma * sigma;
        }
    }
    if a == 0.0 || b <= 0.0 {
        return 0.0;
    }
    if rest == 0.0 {
        return (b - 0.5 * penalty * a.sqrt()).max(0.0) / a;
    }
    // f'(d) = 2(a d − b) + penalty·a·d/sqrt(a d² + rest) is increasing with
    // f'(0) < 0 and f'(b/a) > 0.
    let deriv = |d: f64| 2.0 * (a * d - b) + penalty * a * d / (a * d * d + rest).sqrt();
    let (mut lo, mut hi) = (0.0, b / a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
