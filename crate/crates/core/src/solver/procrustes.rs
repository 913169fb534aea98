//! Loading updates through the orthogonal Procrustes problem.

use nalgebra::DMatrix;

use super::Problem;
use crate::data::CrossCovarianceSet;
use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal, thin_svd};
use crate::model::{JointLcaModel, LoadingMatrix};

/// Singular values at or below this fraction of the largest are null directions.
const NULL_REL_TOL: f64 = 1e-10;

/// `argmin ‖A − V B‖_F` over `V` with orthonormal columns, `A: p×m`, `B: r×m`.
/// Solved as `V = R Qᵀ` from the SVD `A Bᵀ = R Σ Qᵀ`.
pub fn orthogonal_procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() || a.ncols() == 0 {
        return Err(Error::dimension(format!(
            "A is {:?} and B is {:?}; need matching nonzero column counts",
            a.shape(),
            b.shape()
        )));
    }
    if b.nrows() > a.nrows() {
        return Err(Error::dimension(format!(
            "B has {} rows but A only {}; need r <= p",
            b.nrows(),
            a.nrows()
        )));
    }
    polar_factor(&(a * b.transpose()), None)
}

/// Orthonormal-column `V` maximizing `tr(Vᵀ C)`. Directions where `C` is
/// rank-deficient are filled from `reference` when given (kept as close to it
/// as orthogonality allows); otherwise the SVD's own vectors are used.
pub(crate) fn polar_factor(c: &DMatrix<f64>, reference: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let svd = thin_svd(c)?;
    let a = c.ncols();
    let top = svd.singular_values.first().copied().unwrap_or(0.0);
    let nonnull = svd
        .singular_values
        .iter()
        .take_while(|&&s| s > NULL_REL_TOL * top && s > 0.0)
        .count();
    let Some(reference) = reference.filter(|_| nonnull < a) else {
        return Ok(&svd.u * &svd.v_t);
    };
    let u_plus = svd.u.columns(0, nonnull).into_owned();
    let q_plus_t = svd.v_t.rows(0, nonnull);
    let q_null = svd.v_t.rows(nonnull, a - nonnull).transpose();
    let filler = complete_orthonormal(&u_plus, &(reference * &q_null));
    Ok(&u_plus * q_plus_t + filler * q_null.transpose())
}

/// New `V_i` with all other loadings and every scale held fixed. Components
/// that carry no weight in view `i`'s fidelity terms keep their current
/// direction, re-orthogonalized against the updated ones.
pub fn update_loading(i: usize, ccset: &CrossCovarianceSet, model: &JointLcaModel) -> Result<LoadingMatrix> {
    let problem = Problem::new(ccset);
    problem.check_model(model)?;
    if i >= model.num_views() {
        return Err(Error::Index(format!("view {i} of {}", model.num_views())));
    }
    let (v, d) = model.clone().into_parts();
    Ok(LoadingMatrix::from_orthonormal(loading_step(&problem, i, &v, &d)?))
}

pub(crate) fn loading_step(problem: &Problem<'_>, i: usize, v: &[DMatrix<f64>], d: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = v[i].ncols();
    let views = v.len();
    let active: Vec<usize> = (0..r)
        .filter(|&k| {
            d[i][k] > 0.0
                && (0..views)
                    .filter(|&j| j != i)
                    .any(|j| d[j][k] > 0.0 && problem.weight(i, j) > 0.0)
        })
        .collect();
    if active.is_empty() {
        return Ok(v[i].clone());
    }

    // C = Ŝ_{i,−i} M_{i,−i}ᵀ = Σ_j w_ij Ŝ_ij V_j D_j D_i, restricted to active columns.
    let mut c = DMatrix::zeros(v[i].nrows(), active.len());
    for j in (0..views).filter(|&j| j != i) {
        let vj = v[j].select_columns(active.iter());
        let mut t = problem.times_loading(i, j, &vj);
        let w = problem.weight(i, j);
        for (col, &k) in active.iter().enumerate() {
            let scale = w * d[j][k] * d[i][k];
            if scale == 0.0 {
                t.column_mut(col).fill(0.0);
            } else {
                t.column_mut(col).scale_mut(scale);
            }
        }
        c += t;
    }
    let current_active = v[i].select_columns(active.iter());
    let updated_active = polar_factor(&c, Some(&current_active))?;
    if active.len() == r {
        return Ok(updated_active);
    }

    let inactive: Vec<usize> = (0..r).filter(|k| !active.contains(k)).collect();
    let kept = complete_orthonormal(&updated_active, &v[i].select_columns(inactive.iter()));
    let mut out = DMatrix::zeros(v[i].nrows(), r);
    for (col, &k) in active.iter().enumerate() {
        out.set_column(k, &updated_active.column(col));
    }
    for (col, &k) in inactive.iter().enumerate() {
        out.set_column(k, &kept.column(col));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;

    #[test]
    fn identity_cross_product() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let v = orthogonal_procrustes(&eye, &eye).unwrap();
        assert!((v - eye).amax() < 1e-14);
    }

    #[test]
    fn rotation_is_its_own_polar_factor() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let v = orthogonal_procrustes(&rot, &DMatrix::identity(2, 2)).unwrap();
        assert!((v - rot).amax() < 1e-14);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(orthogonal_procrustes(&DMatrix::zeros(2, 3), &DMatrix::zeros(2, 2)).is_err());
        assert!(orthogonal_procrustes(&DMatrix::zeros(2, 3), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn rank_deficient_keeps_reference() {
        // C has rank 1; the null direction should follow the reference.
        let c = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let reference = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let v = polar_factor(&c, Some(&reference)).unwrap();
        assert!(orthonormality_error(&v) < 1e-14);
        assert!((v[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((v[(2, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_returns_reference() {
        let reference = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let v = polar_factor(&DMatrix::zeros(3, 2), Some(&reference)).unwrap();
        assert!((v - reference).amax() < 1e-14);
    }
}
