//! Multiview data: view matrices, CSV ingestion, centering, and the pairwise
//! cross-covariance set with its fidelity weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One data view: `n` samples (rows) by `p` features (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    values: DMatrix<f64>,
    view_id: usize,
}

impl ViewMatrix {
    pub fn new(values: DMatrix<f64>, view_id: usize) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(format!(
                "view {view_id}: need at least 2 samples, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::invalid(format!("view {view_id}: no feature columns")));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::invalid(format!(
                "view {view_id}: non-finite entry at row {r}, column {c}"
            )));
        }
        Ok(Self { values, view_id })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn view_id(&self) -> usize {
        self.view_id
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Sample-aligned collection of at least two views.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewDataset {
    views: Vec<ViewMatrix>,
    n: usize,
}

impl MultiviewDataset {
    /// Builds a dataset from raw matrices; view ids are assigned in order.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let views = matrices
            .into_iter()
            .enumerate()
            .map(|(id, m)| ViewMatrix::new(m, id))
            .collect::<Result<Vec<_>>>()?;
        Self::from_views(views)
    }

    pub fn from_views(views: Vec<ViewMatrix>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 views, got {}", views.len())));
        }
        let n = views[0].nrows();
        for (id, v) in views.iter().enumerate() {
            if v.view_id() != id {
                return Err(Error::invalid(format!(
                    "view at position {id} carries id {}",
                    v.view_id()
                )));
            }
            if v.nrows() != n {
                return Err(Error::dimension(format!(
                    "view 0 has {n} rows but view {id} has {}",
                    v.nrows()
                )));
            }
        }
        Ok(Self { views, n })
    }

    pub fn views(&self) -> &[ViewMatrix] {
        &self.views
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(ViewMatrix::ncols).collect()
    }

    /// Centers every view's columns.
    pub fn centered(&self) -> Self {
        Self {
            views: self.views.iter().map(center_columns).collect(),
            n: self.n,
        }
    }

    /// Restricts every view to the given sample rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let views = self
            .views
            .iter()
            .map(|v| ViewMatrix::new(v.values.select_rows(rows.iter()), v.view_id))
            .collect::<Result<Vec<_>>>()?;
        Self::from_views(views)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: false,
        }
    }
}

/// Reads a rectangular numeric CSV table (rows are samples).
pub fn read_matrix_csv(path: &Path, opts: &CsvOptions) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(file, opts, path)
}

/// Like [`read_matrix_csv`] but wraps the result as a validated view.
pub fn load_view_csv(path: &Path, opts: &CsvOptions, view_id: usize) -> Result<ViewMatrix> {
    ViewMatrix::new(read_matrix_csv(path, opts)?, view_id)
}

/// Parses CSV content; `origin` only labels error messages.
pub fn parse_matrix_csv<R: Read>(reader: R, opts: &CsvOptions, origin: &Path) -> Result<DMatrix<f64>> {
    let csv_err = |line: u64, column: usize, message: String| Error::Csv {
        path: origin.to_path_buf(),
        line,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut data: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(csv_err(
                    line,
                    record.len().min(w) + 1,
                    format!("ragged row: expected {w} fields, found {}", record.len()),
                ));
            }
            Some(_) => {}
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|_| csv_err(line, col + 1, format!("non-numeric cell {field:?}")))?;
            data.push(value);
        }
        rows += 1;
    }
    let Some(cols) = width.filter(|_| rows > 0) else {
        return Err(csv_err(1, 0, "no data rows".into()));
    };
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Writes a matrix as CSV with shortest round-trip float formatting.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 20);
    for row in m.row_iter() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub(crate) fn center_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Subtracts each column's mean.
pub fn center_columns(view: &ViewMatrix) -> ViewMatrix {
    ViewMatrix {
        values: center_matrix(&view.values),
        view_id: view.view_id,
    }
}

/// Scaling applied to `X_iᵀ X_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    ByN,
    ByNMinus1,
}

impl Normalization {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            Normalization::None => 1.0,
            Normalization::ByN => 1.0 / n as f64,
            Normalization::ByNMinus1 => 1.0 / (n as f64 - 1.0),
        }
    }
}

/// All pairs `(i, j)` with `i < j`, in the canonical order
/// `(0,1), (0,2), …, (0,I−1), (1,2), …`.
pub fn pair_list(num_views: usize) -> Vec<(usize, usize)> {
    (0..num_views)
        .flat_map(|i| (i + 1..num_views).map(move |j| (i, j)))
        .collect()
}

/// Position of pair `(i, j)`, `i < j`, in [`pair_list`].
pub fn pair_position(i: usize, j: usize, num_views: usize) -> usize {
    debug_assert!(i < j && j < num_views);
    i * (2 * num_views - i - 1) / 2 + (j - i - 1)
}

pub type PairWeights = BTreeMap<(usize, usize), f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovPair {
    pub i: usize,
    pub j: usize,
    pub matrix: DMatrix<f64>,
    pub weight: f64,
}

/// Pairwise cross-covariances `Ŝ_ij` (i < j) with positive weights `w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovarianceSet {
    dims: Vec<usize>,
    pairs: Vec<CrossCovPair>,
}

impl CrossCovarianceSet {
    /// Builds the set from explicit matrices (one per pair, any order) and
    /// computes the default weights `1/‖Ŝ_ij‖_F²`.
    pub fn from_matrices(dims: Vec<usize>, matrices: Vec<((usize, usize), DMatrix<f64>)>) -> Result<Self> {
        let set = Self::unweighted(dims, matrices)?;
        let weights = fidelity_weights(&set)?;
        set.with_weights(&weights)
    }

    /// Same as [`from_matrices`](Self::from_matrices) but with all weights 1.
    pub fn from_matrices_unit_weights(
        dims: Vec<usize>,
        matrices: Vec<((usize, usize), DMatrix<f64>)>,
    ) -> Result<Self> {
        Self::unweighted(dims, matrices)
    }

    fn unweighted(dims: Vec<usize>, matrices: Vec<((usize, usize), DMatrix<f64>)>) -> Result<Self> {
        let num_views = dims.len();
        if num_views < 2 {
            return Err(Error::invalid("need at least 2 views"));
        }
        let mut slots: Vec<Option<DMatrix<f64>>> = vec![None; num_views * (num_views - 1) / 2];
        for ((i, j), m) in matrices {
            if i >= j || j >= num_views {
                return Err(Error::Index(format!("pair ({i}, {j}) with {num_views} views")));
            }
            if m.shape() != (dims[i], dims[j]) {
                return Err(Error::dimension(format!(
                    "pair ({i}, {j}) has shape {:?}, expected ({}, {})",
                    m.shape(),
                    dims[i],
                    dims[j]
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("pair ({i}, {j}) has non-finite entries")));
            }
            let slot = &mut slots[pair_position(i, j, num_views)];
            if slot.is_some() {
                return Err(Error::invalid(format!("pair ({i}, {j}) given twice")));
            }
            *slot = Some(m);
        }
        let pairs = pair_list(num_views)
            .into_iter()
            .zip(slots)
            .map(|((i, j), m)| {
                m.map(|matrix| CrossCovPair {
                    i,
                    j,
                    matrix,
                    weight: 1.0,
                })
                .ok_or_else(|| Error::invalid(format!("pair ({i}, {j}) missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, pairs })
    }

    /// Replaces the weights. Every pair must be present with a positive finite value.
    pub fn with_weights(mut self, weights: &PairWeights) -> Result<Self> {
        if weights.len() != self.pairs.len() {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                self.pairs.len(),
                weights.len()
            )));
        }
        for pair in &mut self.pairs {
            let w = *weights
                .get(&(pair.i, pair.j))
                .ok_or_else(|| Error::invalid(format!("missing weight for ({}, {})", pair.i, pair.j)))?;
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!(
                    "weight for ({}, {}) must be positive and finite, got {w}",
                    pair.i, pair.j
                )));
            }
            pair.weight = w;
        }
        Ok(self)
    }

    pub fn with_unit_weights(mut self) -> Self {
        for pair in &mut self.pairs {
            pair.weight = 1.0;
        }
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_views(&self) -> usize {
        self.dims.len()
    }

    pub fn pairs(&self) -> &[CrossCovPair] {
        &self.pairs
    }

    /// `Ŝ_ij` for `i < j`.
    pub fn pair(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        (i < j && j < self.num_views()).then(|| &self.pairs[pair_position(i, j, self.num_views())].matrix)
    }

    /// `w_ij` for `i ≠ j` (symmetric).
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        (a < b && b < self.num_views()).then(|| self.pairs[pair_position(a, b, self.num_views())].weight)
    }

    pub fn weights(&self) -> PairWeights {
        self.pairs.iter().map(|p| ((p.i, p.j), p.weight)).collect()
    }

    /// Weights in canonical pair order.
    pub fn weight_values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.weight).collect()
    }

    /// Minimum view dimension, the largest admissible component count.
    pub fn min_dim(&self) -> usize {
        self.dims.iter().copied().min().unwrap_or(0)
    }
}

/// `w_ij = 1/‖Ŝ_ij‖_F²` for every pair.
pub fn fidelity_weights(ccset: &CrossCovarianceSet) -> Result<PairWeights> {
    ccset
        .pairs
        .iter()
        .map(|p| {
            let norm_sq = p.matrix.norm_squared();
            let w = 1.0 / norm_sq;
            if norm_sq == 0.0 || !w.is_finite() {
                Err(Error::DegeneratePair { i: p.i, j: p.j })
            } else {
                Ok(((p.i, p.j), w))
            }
        })
        .collect()
}

/// `c · X_iᵀ X_j` for every pair, without weights. Columns are used as given.
pub(crate) fn cross_products(views: &[&DMatrix<f64>], scale: f64) -> Vec<((usize, usize), DMatrix<f64>)> {
    pair_list(views.len())
        .into_iter()
        .map(|(i, j)| {
            let mut m = views[i].tr_mul(views[j]);
            if scale != 1.0 {
                m *= scale;
            }
            ((i, j), m)
        })
        .collect()
}

/// Cross-covariances `Ŝ_ij = c · X_iᵀ X_j` with default fidelity weights.
/// The views are not re-centered here.
pub fn cross_covariances(dataset: &MultiviewDataset, normalization: Normalization) -> Result<CrossCovarianceSet> {
    let views: Vec<&DMatrix<f64>> = dataset.views().iter().map(ViewMatrix::values).collect();
    let scale = normalization.factor(dataset.n());
    CrossCovarianceSet::from_matrices(dataset.dims(), cross_products(&views, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str, header: bool) -> Result<DMatrix<f64>> {
        let opts = CsvOptions {
            has_header: header,
            ..Default::default()
        };
        parse_matrix_csv(text.as_bytes(), &opts, &PathBuf::from("mem.csv"))
    }

    #[test]
    fn csv_direct_parse() {
        let m = parse("1,2\n3,4\n5,6", false).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }

    #[test]
    fn csv_header_skipped() {
        let m = parse("a,b\n1,2", true).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn csv_ragged_row_reports_line() {
        match parse("1,2\n3", false) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ragged-row error, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_numeric_reports_location() {
        match parse("1,2\n3,x\n", false) {
            Err(Error::Csv { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_empty_file() {
        assert!(matches!(parse("", false), Err(Error::Csv { .. })));
        assert!(matches!(parse("a,b\n", true), Err(Error::Csv { .. })));
    }

    #[test]
    fn csv_semicolon_delimiter() {
        let opts = CsvOptions {
            delimiter: b';',
            has_header: false,
        };
        let m = parse_matrix_csv("1;2\n3;4".as_bytes(), &opts, Path::new("x")).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
    }

    #[test]
    fn csv_write_round_trips() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1e-300, 1.0 / 3.0, 12345.678]);
        let text = matrix_to_csv(&m);
        assert_eq!(parse(&text, false).unwrap(), m);
    }

    fn view(rows: usize, cols: usize, data: &[f64]) -> ViewMatrix {
        ViewMatrix::new(DMatrix::from_row_slice(rows, cols, data), 0).unwrap()
    }

    #[test]
    fn centering_examples() {
        let c = center_columns(&view(3, 1, &[1.0, 2.0, 3.0]));
        assert_eq!(c.values().as_slice(), &[-1.0, 0.0, 1.0]);
        let c = center_columns(&view(2, 1, &[-1.0, 1.0]));
        assert_eq!(c.values().as_slice(), &[-1.0, 1.0]);
        let c = center_columns(&view(3, 1, &[5.0, 5.0, 5.0]));
        assert_eq!(c.values().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn view_validation() {
        assert!(ViewMatrix::new(DMatrix::zeros(1, 3), 0).is_err());
        assert!(ViewMatrix::new(DMatrix::zeros(3, 0), 0).is_err());
        assert!(ViewMatrix::new(DMatrix::from_element(2, 2, f64::NAN), 0).is_err());
        let a = DMatrix::zeros(3, 2);
        let b = DMatrix::zeros(4, 2);
        assert!(matches!(MultiviewDataset::new(vec![a.clone(), b]), Err(Error::Dimension(_))));
        assert!(MultiviewDataset::new(vec![a]).is_err());
    }

    #[test]
    fn two_sample_cross_covariance() {
        let ds = MultiviewDataset::new(vec![
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[2.0, -2.0]),
        ])
        .unwrap();
        let cc = cross_covariances(&ds, Normalization::None).unwrap();
        assert_eq!(cc.pair(0, 1).unwrap()[(0, 0)], 4.0);
        assert_eq!(cc.weight(0, 1), Some(1.0 / 16.0));
        let cc = cross_covariances(&ds, Normalization::ByN).unwrap();
        assert_eq!(cc.pair(0, 1).unwrap()[(0, 0)], 2.0);
        let cc = cross_covariances(&ds, Normalization::ByNMinus1).unwrap();
        assert_eq!(cc.pair(0, 1).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn orthogonal_views_are_degenerate() {
        let ds = MultiviewDataset::new(vec![
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        ])
        .unwrap()
        .centered();
        assert_eq!(ds.views()[1].values().as_slice(), &[0.0, 0.0]);
        match cross_covariances(&ds, Normalization::None) {
            Err(Error::DegeneratePair { i, j }) => assert_eq!((i, j), (0, 1)),
            other => panic!("expected degenerate pair, got {other:?}"),
        }
    }

    #[test]
    fn weight_examples() {
        let one = |m: DMatrix<f64>| {
            let dims = vec![m.nrows(), m.ncols()];
            CrossCovarianceSet::from_matrices(dims, vec![((0, 1), m)]).unwrap().weight(0, 1).unwrap()
        };
        assert_eq!(one(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])), 0.25);
        assert_eq!(one(DMatrix::from_element(1, 1, 1.0)), 1.0);
        assert!((one(DMatrix::from_element(10, 10, 0.1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_positions_match_list() {
        for views in 2..7 {
            for (pos, (i, j)) in pair_list(views).into_iter().enumerate() {
                assert_eq!(pair_position(i, j, views), pos);
            }
        }
    }

    #[test]
    fn ccset_rejects_bad_input() {
        let m = DMatrix::from_element(2, 3, 1.0);
        assert!(CrossCovarianceSet::from_matrices(vec![2, 2], vec![((0, 1), m.clone())]).is_err());
        assert!(CrossCovarianceSet::from_matrices(vec![2, 3, 3], vec![((0, 1), m.clone())]).is_err());
        let cc = CrossCovarianceSet::from_matrices(vec![2, 3], vec![((0, 1), m)]).unwrap();
        let mut bad = PairWeights::new();
        bad.insert((0, 1), -1.0);
        assert!(cc.with_weights(&bad).is_err());
    }
}
