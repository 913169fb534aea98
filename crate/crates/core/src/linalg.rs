//! Small dense linear-algebra helpers shared by the solver, the simulator and
//! the serialization code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin SVD `M = U diag(s) Vᵀ` with deterministic ordering and signs.
///
/// Singular values are sorted in descending order (ties keep the original
/// column order), and each singular pair is sign-flipped so that the
/// largest-magnitude entry of its left vector is positive.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

/// Largest accepted `max|U diag(s) Vᵀ − M|` relative to `max|M|`.
const SVD_RECON_TOL: f64 = 1e-10;

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v_t: DMatrix::zeros(0, cols),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("SVD input contains non-finite entries".into()));
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let u = DMatrix::from_fn(rows, k, |i, j| fu[(i, j)]);
    let s: Vec<f64> = (0..k).map(|j| fs[j]).collect();
    let v_t = DMatrix::from_fn(k, cols, |i, j| fv[(j, i)]);

    let mut us = u.clone();
    for (mut col, sv) in us.column_iter_mut().zip(&s) {
        col *= *sv;
    }
    if (us * &v_t - m).amax() > SVD_RECON_TOL * m.amax() {
        return Err(Error::Numerical("SVD did not converge to an accurate factorization".into()));
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let mut out_u = DMatrix::zeros(rows, k);
    let mut out_vt = DMatrix::zeros(k, cols);
    let mut out_s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let sign = if col[argmax_abs(col.iter().copied())] < 0.0 { -1.0 } else { 1.0 };
        out_u.set_column(dst, &(col * sign));
        out_vt.set_row(dst, &(v_t.row(src) * sign));
        out_s.push(s[src]);
    }
    Ok(ThinSvd {
        u: out_u,
        singular_values: out_s,
        v_t: out_vt,
    })
}

/// Index of the first entry with the largest absolute value.
pub(crate) fn argmax_abs(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (idx, v) in values.enumerate() {
        if v.abs() > best_val {
            best_val = v.abs();
            best = idx;
        }
    }
    best
}

/// Orthonormalizes the columns of `reference` against the orthonormal columns
/// of `fixed` (and against each other), staying as close to `reference` as
/// Gram-Schmidt allows. Columns that collapse are replaced by standard basis
/// vectors. Requires `fixed.ncols() + reference.ncols() <= nrows`.
pub(crate) fn complete_orthonormal(fixed: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let p = reference.nrows();
    let b = reference.ncols();
    debug_assert!(fixed.ncols() + b <= p);
    let mut basis: Vec<DVector<f64>> = fixed.column_iter().map(|c| c.into_owned()).collect();
    let mut out = DMatrix::zeros(p, b);

    let project_out = |v: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(v);
                v.axpy(-c, q, 1.0);
            }
        }
    };

    for col in 0..b {
        let original = reference.column(col).into_owned();
        let scale = original.norm();
        let mut v = original;
        project_out(&mut v, &basis);
        let mut accepted = scale > 0.0 && v.norm() > 1e-6 * scale;
        if !accepted {
            for e in 0..p {
                let mut cand = DVector::zeros(p);
                cand[e] = 1.0;
                project_out(&mut cand, &basis);
                if cand.norm() > 0.5 {
                    v = cand;
                    accepted = true;
                    break;
                }
            }
        }
        assert!(accepted, "orthonormal completion ran out of dimensions");
        let v = v.normalize();
        out.set_column(col, &v);
        basis.push(v);
    }
    out
}

/// `max |AᵀA − I|`.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let gram = m.tr_mul(m);
    let mut worst: f64 = 0.0;
    for c in 0..gram.ncols() {
        for r in 0..gram.nrows() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((gram[(r, c)] - target).abs());
        }
    }
    worst
}

/// Row-major nested vectors, the on-disk layout for every matrix we write.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`to_rows`]; `ncols` disambiguates the empty case.
pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::dimension(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_is_accurate_where_machine_epsilon_stops_early() {
        let m = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.4222538434327591,
                -0.12517181117360276,
                0.032706416438572805,
                0.20387524670323437,
                0.3448535106620205,
                -0.003816032044435834,
                -0.11469835164174266,
                0.16417296795563233,
                0.03998117586973392,
                -0.10041658652586369,
                -0.013718377123746683,
                0.08411599014551543,
            ],
        );
        let svd = thin_svd(&m).unwrap();
        let expected = [0.4930543856724944, 0.4021602707959488, 0.0987839359354776];
        for (s, e) in svd.singular_values.iter().zip(expected) {
            assert!((s - e).abs() < 1e-12, "{s} vs {e}");
        }
    }

    #[test]
    fn svd_reconstructs_and_is_sorted() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.singular_values[0] >= svd.singular_values[1]);
        let rebuilt = &svd.u * DMatrix::from_diagonal(&DVector::from_vec(svd.singular_values.clone())) * &svd.v_t;
        assert!((rebuilt - m).amax() < 1e-12);
        for col in svd.u.column_iter() {
            let idx = argmax_abs(col.iter().copied());
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn svd_of_empty_matrix() {
        let svd = thin_svd(&DMatrix::zeros(4, 0)).unwrap();
        assert_eq!(svd.u.shape(), (4, 0));
        assert!(svd.singular_values.is_empty());
    }

    #[test]
    fn completion_prefers_reference() {
        let fixed = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let reference = DMatrix::from_column_slice(3, 1, &[0.5, 0.0, 1.0]);
        let out = complete_orthonormal(&fixed, &reference);
        assert!((out[(0, 0)]).abs() < 1e-15);
        assert!((out[(2, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn completion_falls_back_to_basis() {
        let fixed = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let reference = DMatrix::from_column_slice(2, 1, &[3.0, 0.0]);
        let out = complete_orthonormal(&fixed, &reference);
        assert!((out[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(from_rows(&to_rows(&m), 3).unwrap(), m);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]], 1).is_err());
    }
}
