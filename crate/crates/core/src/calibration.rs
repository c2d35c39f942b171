//! Split calibration: learn radii on one half, calibrate the inflation on
//! the other, and turn the result into per-time regions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::norms::{
    compute_normed_residuals, fit_ellipsoid_norms, norm_eval, EllipsoidShapes, NormError, NormKind, NormSpec,
    ResidualSeries, DEFAULT_RANK_TOLERANCE,
};
use crate::selector::{
    quantile_index, radii_cost, solve_optimal_radii, RadiusProfile, SelectError, SelectionProblem, SolveOptions,
    SolveStats,
};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 2 series to split, found {0}")]
    TooFewSeries(usize),
    #[error("insufficient data in {stage}: need n >= {required_n} for epsilon {epsilon} (have {n})")]
    InsufficientData { stage: &'static str, epsilon: f64, n: usize, required_n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("invalid predictor artifact: {0}")]
    Artifact(String),
}

fn insufficient(stage: &'static str, err: SelectError) -> CalibrationError {
    match err {
        SelectError::InsufficientData { epsilon, n, required_n } => {
            CalibrationError::InsufficientData { stage, epsilon, n, required_n }
        }
        other => CalibrationError::Select(other),
    }
}

/// Disjoint halves of the calibration set, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub seed: u64,
}

/// Uniformly random split with `n1 = max(1, floor(ratio * n))`.
pub fn split_calibration(n: usize, ratio: f64, seed: u64) -> Result<CalibrationSplit, CalibrationError> {
    if n < 2 {
        return Err(CalibrationError::TooFewSeries(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CalibrationError::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n1 = ((ratio * n as f64).floor() as usize).max(1);
    if n1 >= n {
        return Err(CalibrationError::InvalidArgument(format!("split ratio {ratio} leaves the second half empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut first = order[..n1].to_vec();
    let mut second = order[n1..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok(CalibrationSplit { first, second, seed })
}

/// `max_t (e_t - r_t)` for an already normed series.
pub fn score_normed(radii: &[f64], normed: &[f64]) -> f64 {
    normed.iter().zip(radii).map(|(e, r)| e - r).fold(f64::NEG_INFINITY, f64::max)
}

/// Nonconformity score of a residual trajectory under learned radii.
pub fn score(radii: &[f64], norm: &NormSpec, series: &ResidualSeries) -> Result<f64, CalibrationError> {
    if series.horizon() != radii.len() {
        return Err(CalibrationError::DimensionMismatch {
            expected: format!("T={}", radii.len()),
            found: format!("T={}", series.horizon()),
        });
    }
    let normed = compute_normed_residuals(series, norm)?;
    Ok(score_normed(radii, &normed))
}

/// `p`-th smallest value (1-indexed), ties kept.
pub fn order_statistic(values: &[f64], p: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[p - 1]
}

/// The `p2`-th smallest score, `p2 = ceil((1 - epsilon)(n2 + 1))`.
pub fn calibrate_inflation(scores: &[f64], epsilon: f64) -> Result<f64, CalibrationError> {
    let p2 = quantile_index(epsilon, scores.len()).map_err(|e| insufficient("calibration half", e))?;
    Ok(order_statistic(scores, p2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub epsilon: f64,
    pub norm: NormKind,
    pub split_ratio: f64,
    pub seed: u64,
    pub rank_tolerance: f64,
    pub solve: SolveOptions,
}

impl FitOptions {
    pub fn new(epsilon: f64, norm: NormKind, seed: u64) -> Self {
        Self {
            epsilon,
            norm,
            split_ratio: DEFAULT_SPLIT_RATIO,
            seed,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            solve: SolveOptions::default(),
        }
    }
}

/// Frozen predictor: norm, learned radii and calibrated inflation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalPredictor {
    pub epsilon: f64,
    pub dims: usize,
    pub horizon: usize,
    pub n1: usize,
    pub n2: usize,
    pub p1: usize,
    pub p2: usize,
    pub norm: NormSpec,
    /// Learned radii; `selected` holds dataset indices of the covered series.
    pub radii: RadiusProfile,
    pub inflation: f64,
    pub seed: u64,
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub predictor: ConformalPredictor,
    pub split: CalibrationSplit,
    pub solve_stats: SolveStats,
}

/// Runs the full split-calibration pipeline.
pub fn fit(dataset: &[ResidualSeries], options: &FitOptions) -> Result<Fitted, CalibrationError> {
    let first = dataset.first().ok_or(CalibrationError::TooFewSeries(0))?;
    let (dims, horizon) = (first.dims(), first.horizon());
    for s in dataset {
        if s.dims() != dims || s.horizon() != horizon {
            return Err(CalibrationError::DimensionMismatch {
                expected: format!("d={dims}, T={horizon}"),
                found: format!("d={}, T={}", s.dims(), s.horizon()),
            });
        }
    }
    if !(options.epsilon > 0.0 && options.epsilon < 1.0) {
        return Err(CalibrationError::InvalidArgument(format!("epsilon {} outside (0, 1)", options.epsilon)));
    }
    let split = split_calibration(dataset.len(), options.split_ratio, options.seed)?;
    let (n1, n2) = (split.first.len(), split.second.len());
    let p1 = quantile_index(options.epsilon, n1).map_err(|e| insufficient("radius-learning half", e))?;
    let p2 = quantile_index(options.epsilon, n2).map_err(|e| insufficient("calibration half", e))?;

    let learn: Vec<ResidualSeries> = split.first.iter().map(|&i| dataset[i].clone()).collect();
    let norm = match options.norm {
        NormKind::Ellipsoid => fit_ellipsoid_norms(&learn, options.rank_tolerance)?,
        kind => NormSpec { kind, rank_tolerance: options.rank_tolerance, ellipsoid: None },
    };

    let mut flat = Vec::with_capacity(n1 * horizon);
    for s in &learn {
        flat.extend(compute_normed_residuals(s, &norm)?);
    }
    let problem = SelectionProblem::from_flat(n1, horizon, flat, p1)?;
    let solution = solve_optimal_radii(&problem, &options.solve)?;
    let mut radii = solution.profile;
    radii.selected = radii.selected.iter().map(|&l| split.first[l]).collect();

    let scores =
        split.second.iter().map(|&i| score(&radii.radii, &norm, &dataset[i])).collect::<Result<Vec<_>, _>>()?;
    let inflation = calibrate_inflation(&scores, options.epsilon)?;

    let predictor = ConformalPredictor {
        epsilon: options.epsilon,
        dims,
        horizon,
        n1,
        n2,
        p1,
        p2,
        norm,
        radii,
        inflation,
        seed: options.seed,
        created_at: None,
    };
    Ok(Fitted { predictor, split, solve_stats: solution.stats })
}

/// Per-time regions `{y : ||y - center_t|| <= radius_t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSequence {
    pub centers: ResidualSeries,
    pub radii: Vec<f64>,
    /// Steps whose unclamped radius `inflation + r_t` was negative; these
    /// regions are empty and report radius 0.
    pub empty: Vec<bool>,
    pub norm: NormSpec,
}

impl RegionSequence {
    pub fn has_empty_region(&self) -> bool {
        self.empty.iter().any(|&e| e)
    }
}

impl ConformalPredictor {
    /// Region radii `max(0, inflation + r_t)` and the empty-region flags.
    pub fn region_radii(&self) -> (Vec<f64>, Vec<bool>) {
        self.radii
            .radii
            .iter()
            .map(|r| {
                let rho = self.inflation + r;
                if rho < 0.0 {
                    (0.0, true)
                } else {
                    (rho, false)
                }
            })
            .unzip()
    }

    fn check_shape(&self, s: &ResidualSeries) -> Result<(), CalibrationError> {
        if s.dims() != self.dims || s.horizon() != self.horizon {
            return Err(CalibrationError::DimensionMismatch {
                expected: format!("d={}, T={}", self.dims, self.horizon),
                found: format!("d={}, T={}", s.dims(), s.horizon()),
            });
        }
        Ok(())
    }

    pub fn predict_regions(&self, nominal: &ResidualSeries) -> Result<RegionSequence, CalibrationError> {
        self.check_shape(nominal)?;
        let (radii, empty) = self.region_radii();
        Ok(RegionSequence { centers: nominal.clone(), radii, empty, norm: self.norm.clone() })
    }

    /// Score of a residual trajectory (truth minus nominal).
    pub fn score(&self, residual: &ResidualSeries) -> Result<f64, CalibrationError> {
        self.check_shape(residual)?;
        score(&self.radii.radii, &self.norm, residual)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&PredictorJson::from(self)).expect("predictor serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, CalibrationError> {
        let raw: PredictorJson = serde_json::from_str(text).map_err(|e| CalibrationError::Artifact(e.to_string()))?;
        let predictor = raw.into_predictor()?;
        predictor.validate()?;
        Ok(predictor)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |msg: String| Err(CalibrationError::Artifact(msg));
        if self.p1 != quantile_index(self.epsilon, self.n1)? {
            return bad(format!("p1 = {} inconsistent with epsilon and n1", self.p1));
        }
        if self.p2 != quantile_index(self.epsilon, self.n2)? {
            return bad(format!("p2 = {} inconsistent with epsilon and n2", self.p2));
        }
        if self.radii.radii.len() != self.horizon {
            return bad(format!("{} radii for T = {}", self.radii.radii.len(), self.horizon));
        }
        if self.radii.radii.iter().any(|r| !r.is_finite() || *r < 0.0) || !self.inflation.is_finite() {
            return bad("radii must be finite and nonnegative, inflation finite".into());
        }
        if self.radii.selected.len() != self.p1 {
            return bad(format!("{} selected indices for p1 = {}", self.radii.selected.len(), self.p1));
        }
        self.norm.validate(Some(self.dims), Some(self.horizon))?;
        Ok(())
    }
}

/// True iff every step of `trajectory` lies in its region. Empty regions
/// contain nothing.
pub fn contains(regions: &RegionSequence, trajectory: &ResidualSeries) -> Result<bool, CalibrationError> {
    let centers = &regions.centers;
    if trajectory.dims() != centers.dims() || trajectory.horizon() != centers.horizon() {
        return Err(CalibrationError::DimensionMismatch {
            expected: format!("d={}, T={}", centers.dims(), centers.horizon()),
            found: format!("d={}, T={}", trajectory.dims(), trajectory.horizon()),
        });
    }
    let mut diff = vec![0.0; centers.dims()];
    for t in 0..centers.horizon() {
        if regions.empty[t] {
            return Ok(false);
        }
        for ((d, y), c) in diff.iter_mut().zip(trajectory.column(t)).zip(centers.column(t)) {
            *d = y - c;
        }
        if norm_eval(&diff, &regions.norm, t)? > regions.radii[t] {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Serialize, Deserialize)]
struct NormJson {
    kind: NormKind,
    rank_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape_matrices: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    singular_values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranks: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct PredictorJson {
    format_version: u32,
    epsilon: f64,
    d: usize,
    #[serde(rename = "T")]
    horizon: usize,
    n1: usize,
    n2: usize,
    p1: usize,
    p2: usize,
    norm: NormJson,
    radii: Vec<f64>,
    inflation: f64,
    selected: Vec<usize>,
    provably_optimal: bool,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<String>,
}

impl From<&ConformalPredictor> for PredictorJson {
    fn from(p: &ConformalPredictor) -> Self {
        let d = p.dims;
        let norm = match &p.norm.ellipsoid {
            Some(shapes) => NormJson {
                kind: p.norm.kind,
                rank_tolerance: p.norm.rank_tolerance,
                shape_matrices: Some(
                    shapes
                        .shape_matrices
                        .iter()
                        .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
                        .collect(),
                ),
                // zero padded to length d; `ranks` says how many are retained
                singular_values: Some(
                    shapes
                        .singular_values
                        .iter()
                        .map(|sv| {
                            let mut row = sv.clone();
                            row.resize(d.max(sv.len()), 0.0);
                            row
                        })
                        .collect(),
                ),
                ranks: Some(shapes.ranks.clone()),
            },
            None => NormJson {
                kind: p.norm.kind,
                rank_tolerance: p.norm.rank_tolerance,
                shape_matrices: None,
                singular_values: None,
                ranks: None,
            },
        };
        PredictorJson {
            format_version: FORMAT_VERSION,
            epsilon: p.epsilon,
            d,
            horizon: p.horizon,
            n1: p.n1,
            n2: p.n2,
            p1: p.p1,
            p2: p.p2,
            norm,
            radii: p.radii.radii.clone(),
            inflation: p.inflation,
            selected: p.radii.selected.clone(),
            provably_optimal: p.radii.provably_optimal,
            seed: p.seed,
            created_at: p.created_at.clone(),
        }
    }
}

impl PredictorJson {
    fn into_predictor(self) -> Result<ConformalPredictor, CalibrationError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CalibrationError::Artifact(format!("unsupported format_version {}", self.format_version)));
        }
        let d = self.d;
        let ellipsoid = match (self.norm.kind, self.norm.shape_matrices) {
            (NormKind::Ellipsoid, Some(mats)) => {
                let ranks =
                    self.norm.ranks.ok_or_else(|| CalibrationError::Artifact("ellipsoid norm without ranks".into()))?;
                let svs = self
                    .norm
                    .singular_values
                    .ok_or_else(|| CalibrationError::Artifact("ellipsoid norm without singular values".into()))?;
                if ranks.len() != mats.len() || svs.len() != mats.len() {
                    return Err(CalibrationError::Artifact("ellipsoid metadata length mismatch".into()));
                }
                let mut shape_matrices = Vec::with_capacity(mats.len());
                for (t, m) in mats.into_iter().enumerate() {
                    if m.len() != d || m.iter().any(|row| row.len() != d) {
                        return Err(CalibrationError::Artifact(format!("shape matrix {t} is not {d}x{d}")));
                    }
                    shape_matrices.push(DMatrix::from_row_slice(d, d, &m.concat()));
                }
                let mut singular_values = Vec::with_capacity(svs.len());
                for (sv, &rank) in svs.into_iter().zip(&ranks) {
                    if rank > sv.len() {
                        return Err(CalibrationError::Artifact("rank exceeds singular value count".into()));
                    }
                    singular_values.push(sv[..rank].to_vec());
                }
                Some(EllipsoidShapes { shape_matrices, singular_values, ranks })
            }
            (NormKind::Ellipsoid, None) => return Err(NormError::MissingShapeMatrix.into()),
            (_, Some(_)) => return Err(CalibrationError::Artifact("shape matrices on a non-ellipsoid norm".into())),
            (_, None) => None,
        };
        let cost = radii_cost(&self.radii);
        Ok(ConformalPredictor {
            epsilon: self.epsilon,
            dims: d,
            horizon: self.horizon,
            n1: self.n1,
            n2: self.n2,
            p1: self.p1,
            p2: self.p2,
            norm: NormSpec { kind: self.norm.kind, rank_tolerance: self.norm.rank_tolerance, ellipsoid },
            radii: RadiusProfile {
                radii: self.radii,
                selected: self.selected,
                cost,
                provably_optimal: self.provably_optimal,
            },
            inflation: self.inflation,
            seed: self.seed,
            created_at: self.created_at,
        })
    }
}
