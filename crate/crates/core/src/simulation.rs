//! Synthetic multiview data with a shared joint structure, one individual
//! structure per view, and Gaussian noise calibrated to unit signal-to-noise.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{center_matrix, MultiviewDataset};
use crate::error::{Error, Result};
use crate::linalg::to_rows;

/// How the diagonal strengths are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimCase {
    /// Joint and individual strengths both `U[0, 1]`.
    #[serde(rename = "I")]
    I,
    /// Joint `U[0.5√5, √5]`, individual `U[0.5, 1]`.
    #[serde(rename = "II")]
    II,
}

impl fmt::Display for SimCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimCase::I => "I",
            SimCase::II => "II",
        })
    }
}

impl FromStr for SimCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(SimCase::I),
            "II" | "2" => Ok(SimCase::II),
            _ => Err(Error::invalid(format!("unknown case {s:?}; expected I or II"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Joint,
    Individual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    /// `p_1, …, p_I`; the view count is `dims.len()`.
    pub dims: Vec<usize>,
    pub r0: usize,
    #[serde(default = "default_r_indiv")]
    pub r_indiv: usize,
    pub case: SimCase,
    #[serde(default)]
    pub seed: u64,
    /// Test hook: no noise (`σ = 0`).
    #[serde(default)]
    pub noiseless: bool,
    /// Test hook: individual scores orthogonal to the joint scores and to
    /// each other.
    #[serde(default)]
    pub orthogonal_individual: bool,
}

fn default_r_indiv() -> usize {
    1
}

impl SimConfig {
    pub fn num_views(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 views, got {}", self.dims.len())));
        }
        if self.n < 2 || self.dims.iter().any(|&p| p == 0) || self.r0 == 0 || self.r_indiv == 0 {
            return Err(Error::invalid(format!(
                "n >= 2 and positive dims, r0 and r_indiv required (n={}, dims={:?}, r0={}, r_indiv={})",
                self.n, self.dims, self.r0, self.r_indiv
            )));
        }
        let min_p = *self.dims.iter().min().expect("nonempty");
        if self.r0 + self.r_indiv > self.n.min(min_p) {
            return Err(Error::invalid(format!(
                "r0 + r_indiv = {} exceeds min(n, min p) = {}",
                self.r0 + self.r_indiv,
                self.n.min(min_p)
            )));
        }
        // Centered orthonormal columns live in an (m−1)-dimensional space.
        if self.r0.max(self.r_indiv) > min_p - 1 {
            return Err(Error::invalid(format!(
                "loadings need at most min p − 1 = {} columns after centering",
                min_p - 1
            )));
        }
        let score_cols = if self.orthogonal_individual {
            self.r0 + self.num_views() * self.r_indiv
        } else {
            self.r0.max(self.r_indiv)
        };
        if score_cols > self.n - 1 {
            return Err(Error::invalid(format!(
                "scores need {score_cols} centered orthonormal columns but n − 1 = {}",
                self.n - 1
            )));
        }
        Ok(())
    }

    /// Stable identifier used in benchmark outputs.
    pub fn id(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        let mut id = format!(
            "case{}_I{}_n{}_p{}_r{}_ri{}",
            self.case,
            self.num_views(),
            self.n,
            dims.join("-"),
            self.r0,
            self.r_indiv
        );
        if self.noiseless {
            id.push_str("_noiseless");
        }
        if self.orthogonal_individual {
            id.push_str("_orth");
        }
        id
    }
}

#[derive(Debug, Clone)]
pub struct SimGroundTruth {
    /// Shared scores `U`, `n × r0`.
    pub scores: DMatrix<f64>,
    pub loadings: Vec<DMatrix<f64>>,
    pub scales: Vec<Vec<f64>>,
    pub individual_scores: Vec<DMatrix<f64>>,
    pub individual_loadings: Vec<DMatrix<f64>>,
    pub individual_scales: Vec<Vec<f64>>,
    pub noise_sd: f64,
    /// `Z_i`.
    pub signals: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthDocument {
    pub config: SimConfig,
    pub noise_sd: f64,
    pub scores: Vec<Vec<f64>>,
    pub views: Vec<TruthView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthView {
    pub loadings: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub individual_scores: Vec<Vec<f64>>,
    pub individual_loadings: Vec<Vec<f64>>,
    pub individual_scales: Vec<f64>,
}

impl SimGroundTruth {
    /// JSON layout (matrices row-major). Signals are omitted since they follow
    /// from the factors.
    pub fn to_document(&self, config: &SimConfig) -> TruthDocument {
        TruthDocument {
            config: config.clone(),
            noise_sd: self.noise_sd,
            scores: to_rows(&self.scores),
            views: (0..self.loadings.len())
                .map(|i| TruthView {
                    loadings: to_rows(&self.loadings[i]),
                    scales: self.scales[i].clone(),
                    individual_scores: to_rows(&self.individual_scores[i]),
                    individual_loadings: to_rows(&self.individual_loadings[i]),
                    individual_scales: self.individual_scales[i].clone(),
                })
                .collect(),
        }
    }
}

/// Gaussian `nrows × ncols` draw, column-centered, then orthonormalized by QR
/// with the signs fixed so that `R` has a nonnegative diagonal.
pub fn orthonormal_centered(nrows: usize, ncols: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if nrows == 0 || ncols > nrows - 1 {
        return Err(Error::invalid(format!(
            "{ncols} centered orthonormal columns need more than {ncols} rows, got {nrows}"
        )));
    }
    let draw = DMatrix::from_fn(nrows, ncols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = center_matrix(&draw).qr();
    let r = qr.r();
    let mut q = qr.q();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        if r[(k, k)] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(q)
}

pub fn sample_diagonals(case: SimCase, structure: Structure, count: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (lo, hi) = match (case, structure) {
        (SimCase::I, _) => (0.0, 1.0),
        (SimCase::II, Structure::Joint) => (0.5 * 5f64.sqrt(), 5f64.sqrt()),
        (SimCase::II, Structure::Individual) => (0.5, 1.0),
    };
    (0..count).map(|_| rng.random_range(lo..=hi)).collect()
}

/// `σ = sqrt(Σ‖Z_i‖_F² / (n Σ p_i))`, so that the signal-to-noise ratio is one.
pub fn noise_sd(signals: &[DMatrix<f64>], n: usize, dims: &[usize]) -> Result<f64> {
    let energy: f64 = signals.iter().map(DMatrix::norm_squared).sum();
    if !(energy > 0.0) {
        return Err(Error::invalid("signal is identically zero"));
    }
    let cells = n as f64 * dims.iter().sum::<usize>() as f64;
    Ok((energy / cells).sqrt())
}

/// Derives an independent 64-bit seed from a master seed and stream indices
/// with the SplitMix64 finalizer.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    stream.iter().fold(mix(master), |acc, &s| mix(acc ^ mix(s)))
}

/// `X_i = U D_i V_iᵀ + U_i0 D_i0 V_i0ᵀ + W_i` with `W_i` i.i.d. `N(0, σ²)`.
pub fn generate(config: &SimConfig) -> Result<(MultiviewDataset, SimGroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (n, views, r0, ri) = (config.n, config.num_views(), config.r0, config.r_indiv);

    let (scores, mut individual_scores) = if config.orthogonal_individual {
        let all = orthonormal_centered(n, r0 + views * ri, &mut rng)?;
        let parts = (0..views).map(|i| all.columns(r0 + i * ri, ri).into_owned()).collect();
        (all.columns(0, r0).into_owned(), parts)
    } else {
        (orthonormal_centered(n, r0, &mut rng)?, Vec::with_capacity(views))
    };

    let mut loadings = Vec::with_capacity(views);
    let mut scales = Vec::with_capacity(views);
    let mut individual_loadings = Vec::with_capacity(views);
    let mut individual_scales = Vec::with_capacity(views);
    let mut signals = Vec::with_capacity(views);
    for (i, &p) in config.dims.iter().enumerate() {
        let v = orthonormal_centered(p, r0, &mut rng)?;
        let d = sample_diagonals(config.case, Structure::Joint, r0, &mut rng);
        if !config.orthogonal_individual {
            individual_scores.push(orthonormal_centered(n, ri, &mut rng)?);
        }
        let v0 = orthonormal_centered(p, ri, &mut rng)?;
        let d0 = sample_diagonals(config.case, Structure::Individual, ri, &mut rng);
        let z = scaled_product(&scores, &d, &v) + scaled_product(&individual_scores[i], &d0, &v0);
        loadings.push(v);
        scales.push(d);
        individual_loadings.push(v0);
        individual_scales.push(d0);
        signals.push(z);
    }

    let sigma = if config.noiseless {
        0.0
    } else {
        noise_sd(&signals, n, &config.dims)?
    };
    let matrices = signals
        .iter()
        .map(|z| {
            if sigma == 0.0 {
                z.clone()
            } else {
                z + DMatrix::from_fn(n, z.ncols(), |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
            }
        })
        .collect();
    let dataset = MultiviewDataset::new(matrices)?;
    Ok((
        dataset,
        SimGroundTruth {
            scores,
            loadings,
            scales,
            individual_scores,
            individual_loadings,
            individual_scales,
            noise_sd: sigma,
            signals,
        },
    ))
}

/// `U diag(d) Vᵀ`.
fn scaled_product(u: &DMatrix<f64>, d: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[k];
    }
    scaled * v.transpose()
}

/// The 32 cells of the full simulation study: `I ∈ {3, 4}`, `r0 ∈ {2, 5}`,
/// `n ∈ {100, 200}`, balanced or unbalanced dimensions, and both cases.
pub fn study_grid() -> Vec<SimConfig> {
    let mut grid = Vec::with_capacity(32);
    for views in [3usize, 4] {
        for r0 in [2, 5] {
            for n in [100, 200] {
                for balanced in [true, false] {
                    for case in [SimCase::I, SimCase::II] {
                        let dims = if balanced {
                            vec![100; views]
                        } else {
                            (1..=views).map(|i| 100 * i).collect()
                        };
                        grid.push(SimConfig {
                            n,
                            dims,
                            r0,
                            r_indiv: 1,
                            case,
                            seed: 0,
                            noiseless: false,
                            orthogonal_individual: false,
                        });
                    }
                }
            }
        }
    }
    grid
}
