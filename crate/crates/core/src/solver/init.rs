//! Starting values: leading left singular vectors of the stacked
//! cross-covariances and equal per-component scales across views.

use nalgebra::DMatrix;

use super::updates::rotated_diag_for;
use super::Problem;
use crate::data::CrossCovarianceSet;
use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal, thin_svd};
use crate::model::JointLcaModel;

/// Initial model with `p0` components. `V_i` holds the top `p0` left singular
/// vectors of `[√w_ij Ŝ_ij]_{j≠i}`, and every view gets
/// `d_k = sqrt(Σ_{i<j} max((S̃_ij)_kk, 0) / (I(I−1)/2))`.
///
/// Singular vector signs are aligned across views so that the weighted sum of
/// `(S̃_ij)_kk` over earlier views is nonnegative; otherwise the clamp above
/// would discard components whose signs merely disagree.
pub fn initialize(ccset: &CrossCovarianceSet, p0: usize) -> Result<JointLcaModel> {
    if p0 == 0 || p0 > ccset.min_dim() {
        return Err(Error::invalid(format!(
            "p0 must be in 1..={} (smallest view dimension), got {p0}",
            ccset.min_dim()
        )));
    }
    let problem = Problem::new(ccset);
    let mut v = Vec::with_capacity(problem.views);
    for i in 0..problem.views {
        let svd = thin_svd(&stacked(&problem, i))?;
        v.push(svd.u.columns(0, p0).into_owned());
    }
    let components: Vec<usize> = (0..p0).collect();
    align_signs(&problem, &mut v, &components);

    let s = rotated_diag_for(&problem, &v, &components);
    let pairs = problem.pairs.len() as f64;
    let d_k: Vec<f64> = components
        .iter()
        .map(|&k| (s.iter().map(|sp| sp[k].max(0.0)).sum::<f64>() / pairs).sqrt())
        .collect();
    let d = vec![d_k; problem.views];
    Ok(JointLcaModel::from_parts(v, d, 0.0))
}

/// `[√w_ij Ŝ_ij]_{j≠i}`, a `p_i × Σ_{j≠i} p_j` matrix.
fn stacked(problem: &Problem<'_>, i: usize) -> DMatrix<f64> {
    let dims = problem.cc.dims();
    let width: usize = (0..problem.views).filter(|&j| j != i).map(|j| dims[j]).sum();
    let mut out = DMatrix::zeros(dims[i], width);
    let mut offset = 0;
    for j in (0..problem.views).filter(|&j| j != i) {
        let scale = problem.weight(i, j).sqrt();
        let block = if i < j {
            problem.cc.pair(i, j).expect("valid pair") * scale
        } else {
            problem.cc.pair(j, i).expect("valid pair").transpose() * scale
        };
        out.columns_mut(offset, dims[j]).copy_from(&block);
        offset += dims[j];
    }
    out
}

/// For each listed component and views `1..I` in order, flips `v_jk` when
/// `Σ_{i<j} w_ij v_ikᵀ Ŝ_ij v_jk < 0`.
fn align_signs(problem: &Problem<'_>, v: &mut [DMatrix<f64>], components: &[usize]) {
    for &k in components {
        for j in 1..problem.views {
            let vj = v[j].column(k).into_owned();
            let vj_mat = DMatrix::from_column_slice(vj.len(), 1, vj.as_slice());
            let agreement: f64 = (0..j)
                .map(|i| {
                    let t = problem.times_loading(i, j, &vj_mat);
                    problem.weight(i, j) * v[i].column(k).dot(&t.column(0))
                })
                .sum();
            if agreement < 0.0 {
                v[j].column_mut(k).neg_mut();
            }
        }
    }
}

/// Appends components `q..r` to a model with `q` orthonormal columns per view.
/// New directions are the leading left singular vectors of the stacked
/// cross-covariances after projecting out the kept columns; each new component
/// gets the scale `sqrt(max(Σ w s̃ / Σ w, 0))` on every view, which minimizes
/// the fidelity over equal scales and so never increases it.
pub(super) fn extend_components(
    problem: &Problem<'_>,
    v: Vec<DMatrix<f64>>,
    d: Vec<Vec<f64>>,
    r: usize,
) -> Result<(Vec<DMatrix<f64>>, Vec<Vec<f64>>)> {
    let q = v[0].ncols();
    let extra = r - q;
    let mut out_v = Vec::with_capacity(v.len());
    for (i, vi) in v.iter().enumerate() {
        let s = stacked(problem, i);
        let residual = &s - vi * vi.tr_mul(&s);
        let svd = thin_svd(&residual)?;
        let directions = svd.u.columns(0, extra.min(svd.u.ncols())).into_owned();
        let mut reference = DMatrix::zeros(vi.nrows(), extra);
        reference.columns_mut(0, directions.ncols()).copy_from(&directions);
        let fresh = complete_orthonormal(vi, &reference);
        let mut full = DMatrix::zeros(vi.nrows(), r);
        full.columns_mut(0, q).copy_from(vi);
        full.columns_mut(q, extra).copy_from(&fresh);
        out_v.push(full);
    }
    let new: Vec<usize> = (q..r).collect();
    align_signs(problem, &mut out_v, &new);

    let s = rotated_diag_for(problem, &out_v, &new);
    let total_w: f64 = problem.weights.iter().sum();
    let mut out_d = d;
    for &k in &new {
        let mean: f64 = s.iter().zip(&problem.weights).map(|(sp, w)| w * sp[k]).sum::<f64>() / total_w;
        let scale = mean.max(0.0).sqrt();
        for di in &mut out_d {
            di.push(scale);
        }
    }
    Ok((out_v, out_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pair_list;

    #[test]
    fn rank_one_equal_scales_recovered() {
        // Ŝ_12 = v1 d² v2ᵀ with d = 1.5.
        let v1 = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let v2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let s = &v1 * v2.transpose() * 2.25;
        let cc = CrossCovarianceSet::from_matrices(vec![3, 2], vec![((0, 1), s)]).unwrap();
        let model = initialize(&cc, 1).unwrap();
        assert!((model.scale(0, 0) - 1.5).abs() < 1e-6);
        assert!((model.scale(1, 0) - 1.5).abs() < 1e-6);
    }

    #[test]
    fn zero_cross_covariance_gives_zero_scales() {
        let mats = pair_list(3)
            .into_iter()
            .map(|(i, j)| ((i, j), DMatrix::zeros(2, 2)))
            .collect();
        let cc = CrossCovarianceSet::from_matrices_unit_weights(vec![2, 2, 2], mats).unwrap();
        let model = initialize(&cc, 2).unwrap();
        for i in 0..3 {
            assert!(model.scales()[i].entries().iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn signs_are_aligned() {
        // Negative singular structure: Ŝ_12 = −u vᵀ. Without alignment the
        // rotated diagonal could be negative and clamp to 0.
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = -(&u * v.transpose());
        let cc = CrossCovarianceSet::from_matrices(vec![2, 2], vec![((0, 1), s)]).unwrap();
        let model = initialize(&cc, 1).unwrap();
        assert!((model.scale(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p0_bounds() {
        let cc = CrossCovarianceSet::from_matrices(vec![2, 3], vec![((0, 1), DMatrix::from_element(2, 3, 1.0))]).unwrap();
        assert!(initialize(&cc, 0).is_err());
        assert!(initialize(&cc, 3).is_err());
        assert_eq!(initialize(&cc, 2).unwrap().rank(), 2);
    }
}
