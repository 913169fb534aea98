//! The fitted model `{V_i, D_i}` and the quantities evaluated on it:
//! pairwise reconstructions, weighted fidelity, group penalty and objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{pair_list, CrossCovarianceSet, MultiviewDataset};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, orthonormality_error, to_rows};

/// Tolerance on `max |VᵀV − I|` accepted by [`LoadingMatrix::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Relative factor for the default rank tolerance.
pub const RANK_REL_TOL: f64 = 1e-8;

/// `p_i × r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix(DMatrix<f64>);

impl LoadingMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let err = orthonormality_error(&values);
        if !(err <= ORTHONORMAL_TOL) {
            return Err(Error::invalid(format!(
                "loading columns are not orthonormal (max |VᵀV − I| = {err:e})"
            )));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_orthonormal(values: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_error(&values) <= 1e-6);
        Self(values)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

/// Nonnegative diagonal entries `d_i1, …, d_ir`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDiagonal(Vec<f64>);

impl ScaleDiagonal {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::invalid(format!("scale entries must be finite and >= 0, got {bad}")));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Component `k` of the model viewed as a group: `σ_ijk = d_ik d_jk` for all
/// pairs in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGroup {
    pub k: usize,
    pub values: Vec<f64>,
}

impl SigmaGroup {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn weighted_norm(&self, weights: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(weights)
            .map(|(s, w)| w * s * s)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLcaModel {
    loadings: Vec<LoadingMatrix>,
    scales: Vec<ScaleDiagonal>,
    lambda: f64,
}

impl JointLcaModel {
    pub fn new(loadings: Vec<LoadingMatrix>, scales: Vec<ScaleDiagonal>, lambda: f64) -> Result<Self> {
        if loadings.len() < 2 || loadings.len() != scales.len() {
            return Err(Error::invalid(format!(
                "need matching loadings/scales for at least 2 views, got {} and {}",
                loadings.len(),
                scales.len()
            )));
        }
        let r = loadings[0].ncols();
        for (i, (v, d)) in loadings.iter().zip(&scales).enumerate() {
            if v.ncols() != r || d.len() != r {
                return Err(Error::dimension(format!(
                    "view {i}: loadings have {} columns and {} scales, expected {r}",
                    v.ncols(),
                    d.len()
                )));
            }
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self {
            loadings,
            scales,
            lambda,
        })
    }

    /// Rank-zero model for views of the given dimensions.
    pub fn empty(dims: &[usize], lambda: f64) -> Self {
        Self {
            loadings: dims.iter().map(|&p| LoadingMatrix(DMatrix::zeros(p, 0))).collect(),
            scales: dims.iter().map(|_| ScaleDiagonal(Vec::new())).collect(),
            lambda,
        }
    }

    pub(crate) fn from_parts(v: Vec<DMatrix<f64>>, d: Vec<Vec<f64>>, lambda: f64) -> Self {
        Self {
            loadings: v.into_iter().map(LoadingMatrix::from_orthonormal).collect(),
            scales: d.into_iter().map(ScaleDiagonal).collect(),
            lambda,
        }
    }

    pub(crate) fn into_parts(self) -> (Vec<DMatrix<f64>>, Vec<Vec<f64>>) {
        (
            self.loadings.into_iter().map(LoadingMatrix::into_inner).collect(),
            self.scales.into_iter().map(|s| s.0).collect(),
        )
    }

    pub fn loadings(&self) -> &[LoadingMatrix] {
        &self.loadings
    }

    pub fn scales(&self) -> &[ScaleDiagonal] {
        &self.scales
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Working component count `r`.
    pub fn rank(&self) -> usize {
        self.loadings[0].ncols()
    }

    pub fn num_views(&self) -> usize {
        self.loadings.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.loadings.iter().map(LoadingMatrix::nrows).collect()
    }

    /// `d_ik`.
    pub fn scale(&self, i: usize, k: usize) -> f64 {
        self.scales[i].0[k]
    }

    pub fn sigma_group(&self, k: usize) -> SigmaGroup {
        let values = pair_list(self.num_views())
            .into_iter()
            .map(|(i, j)| self.scale(i, k) * self.scale(j, k))
            .collect();
        SigmaGroup { k, values }
    }

    pub fn sigma_groups(&self) -> Vec<SigmaGroup> {
        (0..self.rank()).map(|k| self.sigma_group(k)).collect()
    }

    /// Per-component `sqrt(Σ w_ij σ_ijk²)`; unit weights when `weights` is `None`.
    pub fn group_norms(&self, weights: Option<&[f64]>) -> Vec<f64> {
        self.sigma_groups()
            .iter()
            .map(|g| match weights {
                Some(w) => g.weighted_norm(w),
                None => g.norm(),
            })
            .collect()
    }

    /// Reorders components by descending weighted group norm (stable).
    pub fn sort_components(&mut self, weights: &[f64]) {
        let norms = self.group_norms(Some(weights));
        let mut order: Vec<usize> = (0..self.rank()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
        self.permute_components(&order);
    }

    fn permute_components(&mut self, order: &[usize]) {
        for (v, d) in self.loadings.iter_mut().zip(&mut self.scales) {
            v.0 = v.0.select_columns(order.iter());
            d.0 = order.iter().map(|&k| d.0[k]).collect();
        }
    }

    /// Keeps the first `r` components.
    pub fn truncated(&self, r: usize) -> Self {
        let keep: Vec<usize> = (0..r.min(self.rank())).collect();
        let mut out = self.clone();
        out.permute_components(&keep);
        out
    }
}

/// `V_i D_i D_jᵀ V_jᵀ`.
pub fn reconstruct_pair(model: &JointLcaModel, i: usize, j: usize) -> Result<DMatrix<f64>> {
    let views = model.num_views();
    if i >= views || j >= views || i == j {
        return Err(Error::Index(format!("pair ({i}, {j}) with {views} views")));
    }
    let vi = model.loadings[i].as_matrix();
    let mut scaled = model.loadings[j].as_matrix().clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= model.scale(i, k) * model.scale(j, k);
    }
    Ok(vi * scaled.transpose())
}

fn check_compatible(model: &JointLcaModel, ccset: &CrossCovarianceSet) -> Result<()> {
    if model.dims() != ccset.dims() {
        return Err(Error::dimension(format!(
            "model dims {:?} vs cross-covariance dims {:?}",
            model.dims(),
            ccset.dims()
        )));
    }
    Ok(())
}

/// `Σ_{i<j} w_ij ‖Ŝ_ij − V_i D_i D_jᵀ V_jᵀ‖_F²` with the set's own weights.
pub fn fidelity(model: &JointLcaModel, ccset: &CrossCovarianceSet) -> Result<f64> {
    fidelity_with_weights(model, ccset, &ccset.weight_values())
}

/// Same as [`fidelity`] with externally supplied weights (canonical pair order).
pub fn fidelity_with_weights(model: &JointLcaModel, ccset: &CrossCovarianceSet, weights: &[f64]) -> Result<f64> {
    check_compatible(model, ccset)?;
    if weights.len() != ccset.pairs().len() {
        return Err(Error::dimension(format!(
            "{} weights for {} pairs",
            weights.len(),
            ccset.pairs().len()
        )));
    }
    let mut total = 0.0;
    for (pair, w) in ccset.pairs().iter().zip(weights) {
        let recon = reconstruct_pair(model, pair.i, pair.j)?;
        total += w * (&pair.matrix - recon).norm_squared();
    }
    Ok(total)
}

/// `Σ_k sqrt(Σ_{i<j} w_ij σ_ijk²)`; `weights` in canonical pair order.
pub fn penalty_value(model: &JointLcaModel, weights: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), model.num_views() * (model.num_views() - 1) / 2);
    model.group_norms(Some(weights)).iter().sum()
}

/// `fidelity + λ · penalty`.
pub fn objective(model: &JointLcaModel, ccset: &CrossCovarianceSet, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let fid = fidelity(model, ccset)?;
    Ok(fid + lambda * penalty_value(model, &ccset.weight_values()))
}

/// Number of components whose unweighted group norm exceeds `tol`.
pub fn estimated_rank(model: &JointLcaModel, tol: f64) -> usize {
    model.group_norms(None).iter().filter(|&&g| g > tol).count()
}

/// `RANK_REL_TOL · max_k ‖σ_k‖`.
pub fn default_rank_tolerance(model: &JointLcaModel) -> f64 {
    RANK_REL_TOL * model.group_norms(None).into_iter().fold(0.0, f64::max)
}

/// [`estimated_rank`] at the default relative tolerance.
pub fn estimated_rank_default(model: &JointLcaModel) -> usize {
    estimated_rank(model, default_rank_tolerance(model))
}

/// Averaged scores `U = (1/I) Σ_i X_i V_i D_i⁻¹` over the retained components
/// (those counted by [`estimated_rank_default`]). Views are used as given.
pub fn compute_scores(dataset: &MultiviewDataset, model: &JointLcaModel) -> Result<DMatrix<f64>> {
    if dataset.dims() != model.dims() {
        return Err(Error::dimension(format!(
            "data dims {:?} vs model dims {:?}",
            dataset.dims(),
            model.dims()
        )));
    }
    let tol = default_rank_tolerance(model);
    let retained: Vec<usize> = model
        .group_norms(None)
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > tol)
        .map(|(k, _)| k)
        .collect();
    if retained.is_empty() {
        return Err(Error::invalid("model has rank 0; no scores to compute"));
    }
    let views = model.num_views();
    let mut scores = DMatrix::zeros(dataset.n(), retained.len());
    for (i, view) in dataset.views().iter().enumerate() {
        let v = model.loadings[i].as_matrix().select_columns(retained.iter());
        let mut projected = view.values() * v;
        for (col, &k) in retained.iter().enumerate() {
            let d = model.scale(i, k);
            if d == 0.0 {
                return Err(Error::invalid(format!(
                    "scale d[{i}][{k}] is zero for a retained component; scores are undefined"
                )));
            }
            projected.column_mut(col).scale_mut(1.0 / (d * views as f64));
        }
        scores += projected;
    }
    Ok(scores)
}

/// JSON layout of a model. Loadings are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub r: usize,
    pub lambda: f64,
    pub zero_rank: bool,
    pub views: Vec<ViewDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewDocument {
    pub p: usize,
    pub loadings: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl JointLcaModel {
    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            r: self.rank(),
            lambda: self.lambda,
            zero_rank: self.rank() == 0,
            views: self
                .loadings
                .iter()
                .zip(&self.scales)
                .map(|(v, d)| ViewDocument {
                    p: v.nrows(),
                    loadings: to_rows(v.as_matrix()),
                    scales: d.0.clone(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.r == 0 {
            let dims: Vec<usize> = doc.views.iter().map(|v| v.p).collect();
            if dims.len() < 2 {
                return Err(Error::invalid("model document needs at least 2 views"));
            }
            return Ok(Self::empty(&dims, doc.lambda));
        }
        let mut loadings = Vec::with_capacity(doc.views.len());
        let mut scales = Vec::with_capacity(doc.views.len());
        for view in &doc.views {
            let m = from_rows(&view.loadings, doc.r)?;
            if m.nrows() != view.p {
                return Err(Error::dimension(format!("loadings have {} rows, p = {}", m.nrows(), view.p)));
            }
            loadings.push(LoadingMatrix::new(m)?);
            scales.push(ScaleDiagonal::new(view.scales.clone())?);
        }
        Self::new(loadings, scales, doc.lambda)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn model(v: Vec<DMatrix<f64>>, d: Vec<Vec<f64>>) -> JointLcaModel {
        JointLcaModel::new(
            v.into_iter().map(|m| LoadingMatrix::new(m).unwrap()).collect(),
            d.into_iter().map(|s| ScaleDiagonal::new(s).unwrap()).collect(),
            0.0,
        )
        .unwrap()
    }

    fn e(p: usize, idx: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(p, 1);
        m[(idx, 0)] = 1.0;
        m
    }

    #[test]
    fn rank_one_reconstruction() {
        let m = model(vec![e(2, 0), e(2, 1)], vec![vec![2.0], vec![3.0]]);
        let rec = reconstruct_pair(&m, 0, 1).unwrap();
        assert_eq!(rec, DMatrix::from_row_slice(2, 2, &[0.0, 6.0, 0.0, 0.0]));
        assert!(reconstruct_pair(&m, 0, 2).is_err());
        assert!(reconstruct_pair(&m, 1, 1).is_err());
    }

    #[test]
    fn zero_scales_reconstruct_zero() {
        let m = model(vec![e(3, 0), e(2, 1)], vec![vec![0.0], vec![0.0]]);
        assert_eq!(reconstruct_pair(&m, 0, 1).unwrap(), DMatrix::zeros(3, 2));
    }

    #[test]
    fn scalar_fidelity() {
        let cc = CrossCovarianceSet::from_matrices(vec![1, 1], vec![((0, 1), DMatrix::from_element(1, 1, 1.0))])
            .unwrap();
        let m = model(vec![e(1, 0), e(1, 0)], vec![vec![0.5], vec![1.0]]);
        assert!((fidelity(&m, &cc).unwrap() - 0.25).abs() < 1e-15);
        let exact = model(vec![e(1, 0), e(1, 0)], vec![vec![1.0], vec![1.0]]);
        assert_eq!(fidelity(&exact, &cc).unwrap(), 0.0);
        assert_eq!(objective(&exact, &cc, 1.0).unwrap(), penalty_value(&exact, &[1.0]));
    }

    #[test]
    fn penalty_examples() {
        let two = model(vec![e(1, 0), e(1, 0)], vec![vec![1.0], vec![1.0]]);
        assert_eq!(penalty_value(&two, &[1.0]), 1.0);
        let three = model(vec![e(1, 0), e(1, 0), e(1, 0)], vec![vec![1.0]; 3]);
        assert!((penalty_value(&three, &[1.0; 3]) - 3f64.sqrt()).abs() < 1e-15);
        let zero = model(vec![e(1, 0), e(1, 0), e(1, 0)], vec![vec![0.0]; 3]);
        assert_eq!(penalty_value(&zero, &[1.0; 3]), 0.0);
    }

    #[test]
    fn rank_examples() {
        let zero = model(vec![e(2, 0), e(2, 0)], vec![vec![0.0], vec![0.0]]);
        assert_eq!(estimated_rank(&zero, 0.0), 0);
        assert_eq!(estimated_rank_default(&zero), 0);

        let eye = DMatrix::<f64>::identity(3, 3);
        let m = model(vec![eye.clone(), eye], vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]);
        assert_eq!(estimated_rank(&m, 1e-8), 2);

        let m = model(vec![e(2, 0), e(2, 0)], vec![vec![1.0], vec![0.0]]);
        assert_eq!(estimated_rank(&m, 0.0), 0);
    }

    #[test]
    fn invalid_parts_rejected() {
        assert!(LoadingMatrix::new(DMatrix::from_element(2, 1, 1.0)).is_err());
        assert!(ScaleDiagonal::new(vec![-0.1]).is_err());
        let v = LoadingMatrix::new(e(2, 0)).unwrap();
        let d = ScaleDiagonal::new(vec![1.0, 2.0]).unwrap();
        assert!(JointLcaModel::new(vec![v.clone(), v], vec![d.clone(), d], 0.0).is_err());
    }

    #[test]
    fn sorting_orders_by_group_norm() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let mut m = model(vec![eye.clone(), eye], vec![vec![1.0, 2.0], vec![1.0, 3.0]]);
        m.sort_components(&[1.0]);
        assert_eq!(m.scales()[0].entries(), &[2.0, 1.0]);
        assert_eq!(m.scales()[1].entries(), &[3.0, 1.0]);
        assert_eq!(m.loadings()[0].as_matrix()[(1, 0)], 1.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let m = JointLcaModel::new(
            vec![LoadingMatrix::new(rot.clone()).unwrap(), LoadingMatrix::new(rot).unwrap()],
            vec![
                ScaleDiagonal::new(vec![1.0 / 3.0, 1e-17]).unwrap(),
                ScaleDiagonal::new(vec![2.5, 0.0]).unwrap(),
            ],
            0.125,
        )
        .unwrap();
        let back = JointLcaModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);

        let empty = JointLcaModel::empty(&[3, 4], 0.0);
        let back = JointLcaModel::from_json(&empty.to_json()).unwrap();
        assert_eq!(back.rank(), 0);
        assert_eq!(back.dims(), vec![3, 4]);
    }
}
