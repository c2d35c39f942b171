//! Per-time norms of residual vectors.
//!
//! A residual trajectory is a `d × T` matrix; reducing every column with a
//! norm yields the length-`T` normed residual series that the selector works
//! on. Four region shapes are supported: `l1` (cross-polytope), `l2` (ball),
//! `l∞` (box) and a per-time ellipsoid whose shape matrix is the SVD
//! pseudo-inverse of the second moment of the calibration residuals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative singular-value cutoff for the ellipsoid pseudo-inverse.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("ellipsoid norm has no shape matrices")]
    MissingShapeMatrix,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("time index {t} out of range for horizon {horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite residual at series {series}, dim {dim}, time {t}")]
    NonFinite { series: usize, dim: usize, t: usize },
    #[error("invalid norm specification: {0}")]
    InvalidSpec(String),
}

/// One trajectory's residuals, stored as `d` rows by `T` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    dims: usize,
    horizon: usize,
    // column-major: column t occupies values[t*dims..(t+1)*dims]
    values: Vec<f64>,
}

impl ResidualSeries {
    /// Builds a series from rows, `rows[k][t]` being dimension `k` at time `t`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NormError> {
        let dims = rows.len();
        if dims == 0 {
            return Err(NormError::InvalidSpec("residual series needs d >= 1".into()));
        }
        let horizon = rows[0].len();
        if horizon == 0 {
            return Err(NormError::InvalidSpec("residual series needs T >= 1".into()));
        }
        let mut values = vec![0.0; dims * horizon];
        for (k, row) in rows.iter().enumerate() {
            if row.len() != horizon {
                return Err(NormError::DimensionMismatch { expected: horizon, found: row.len() });
            }
            for (t, &v) in row.iter().enumerate() {
                values[t * dims + k] = v;
            }
        }
        Self::from_columns(dims, horizon, values)
    }

    /// Builds a series from a flat buffer laid out time-major: the `d` values
    /// of step 0, then step 1, and so on.
    pub fn from_columns(dims: usize, horizon: usize, values: Vec<f64>) -> Result<Self, NormError> {
        if dims == 0 || horizon == 0 {
            return Err(NormError::InvalidSpec("residual series needs d >= 1 and T >= 1".into()));
        }
        if values.len() != dims * horizon {
            return Err(NormError::DimensionMismatch { expected: dims * horizon, found: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(NormError::NonFinite { series: 0, dim: pos % dims, t: pos / dims });
        }
        Ok(Self { dims, horizon, values })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Residual vector at time `t`.
    pub fn column(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    /// Time-major flat view of the values.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Element-wise `self - other`, used to turn (true, nominal) pairs into residuals.
    pub fn difference(&self, other: &ResidualSeries) -> Result<ResidualSeries, NormError> {
        if self.dims != other.dims {
            return Err(NormError::DimensionMismatch { expected: self.dims, found: other.dims });
        }
        if self.horizon != other.horizon {
            return Err(NormError::DimensionMismatch { expected: self.horizon, found: other.horizon });
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        ResidualSeries::from_columns(self.dims, self.horizon, values)
    }

    pub fn scaled(&self, factor: f64) -> ResidualSeries {
        ResidualSeries {
            dims: self.dims,
            horizon: self.horizon,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
    #[serde(rename = "linf")]
    LInf,
    Ellipsoid,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::LInf => "linf",
            NormKind::Ellipsoid => "ellipsoid",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = NormError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" | "l-inf" | "inf" => Ok(NormKind::LInf),
            "ellipsoid" | "ell" => Ok(NormKind::Ellipsoid),
            other => Err(NormError::InvalidSpec(format!("unknown norm kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fitted ellipsoid geometry at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidShapes {
    /// Pseudo-inverse of the second-moment matrix, one `d × d` per step.
    pub shape_matrices: Vec<DMatrix<f64>>,
    /// Singular values of the second-moment matrix kept by the cutoff,
    /// in descending order. Length equals the rank at that step.
    pub singular_values: Vec<Vec<f64>>,
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub rank_tolerance: f64,
    pub ellipsoid: Option<EllipsoidShapes>,
}

impl NormSpec {
    pub fn new(kind: NormKind) -> Self {
        Self { kind, rank_tolerance: DEFAULT_RANK_TOLERANCE, ellipsoid: None }
    }

    pub fn l1() -> Self {
        Self::new(NormKind::L1)
    }

    pub fn l2() -> Self {
        Self::new(NormKind::L2)
    }

    pub fn linf() -> Self {
        Self::new(NormKind::LInf)
    }

    /// Ellipsoid norm from explicit shape matrices. Singular values and
    /// ranks describe the second-moment matrix the shape is the
    /// pseudo-inverse of, so the reciprocals of the shape's own values.
    pub fn ellipsoid_from_shapes(shape_matrices: Vec<DMatrix<f64>>, rank_tolerance: f64) -> Result<Self, NormError> {
        let mut singular_values = Vec::with_capacity(shape_matrices.len());
        let mut ranks = Vec::with_capacity(shape_matrices.len());
        for m in &shape_matrices {
            let (_, sv, rank) = pseudo_inverse(m, rank_tolerance);
            singular_values.push(sv.iter().rev().map(|s| 1.0 / s).collect());
            ranks.push(rank);
        }
        let spec = Self {
            kind: NormKind::Ellipsoid,
            rank_tolerance,
            ellipsoid: Some(EllipsoidShapes { shape_matrices, singular_values, ranks }),
        };
        spec.validate(None, None)?;
        Ok(spec)
    }

    /// Checks the structural invariants, optionally against known `(d, T)`.
    pub fn validate(&self, dims: Option<usize>, horizon: Option<usize>) -> Result<(), NormError> {
        if !(0.0..1.0).contains(&self.rank_tolerance) {
            return Err(NormError::InvalidSpec(format!("rank_tolerance {} outside [0, 1)", self.rank_tolerance)));
        }
        match (&self.kind, &self.ellipsoid) {
            (NormKind::Ellipsoid, None) => Err(NormError::MissingShapeMatrix),
            (NormKind::Ellipsoid, Some(shapes)) => {
                let n = shapes.shape_matrices.len();
                if shapes.singular_values.len() != n || shapes.ranks.len() != n {
                    return Err(NormError::InvalidSpec("ellipsoid metadata length differs from shape count".into()));
                }
                if let Some(h) = horizon {
                    if n != h {
                        return Err(NormError::DimensionMismatch { expected: h, found: n });
                    }
                }
                for (t, m) in shapes.shape_matrices.iter().enumerate() {
                    if !m.is_square() {
                        return Err(NormError::InvalidSpec(format!("shape matrix {t} not square")));
                    }
                    if let Some(d) = dims {
                        if m.nrows() != d {
                            return Err(NormError::DimensionMismatch { expected: d, found: m.nrows() });
                        }
                    }
                    check_symmetric_psd(m).map_err(|msg| NormError::InvalidSpec(format!("shape matrix {t}: {msg}")))?;
                }
                Ok(())
            }
            (_, Some(_)) => Err(NormError::InvalidSpec(format!("{} norm must not carry shape matrices", self.kind))),
            (_, None) => Ok(()),
        }
    }

    pub fn horizon(&self) -> Option<usize> {
        self.ellipsoid.as_ref().map(|e| e.shape_matrices.len())
    }

    /// Times whose second-moment matrix is rank deficient.
    pub fn degenerate_times(&self, dims: usize) -> Vec<usize> {
        match &self.ellipsoid {
            Some(shapes) => shapes.ranks.iter().enumerate().filter(|(_, &r)| r < dims).map(|(t, _)| t).collect(),
            None => Vec::new(),
        }
    }
}

fn check_symmetric_psd(m: &DMatrix<f64>) -> Result<(), String> {
    let scale = m.amax();
    if !m.iter().all(|v| v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
                return Err(format!("asymmetric at ({i}, {j})"));
            }
        }
    }
    if scale == 0.0 {
        return Ok(());
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    // eigenvalue noise of a PSD matrix is O(n * eps * ||m||)
    if min < -1e-9 * scale * n as f64 {
        return Err(format!("not positive semidefinite (eigenvalue {min})"));
    }
    Ok(())
}

/// Evaluates `||v||` under `spec` at time `t`.
pub fn norm_eval(v: &[f64], spec: &NormSpec, t: usize) -> Result<f64, NormError> {
    match spec.kind {
        NormKind::L1 => Ok(v.iter().map(|x| x.abs()).sum()),
        NormKind::L2 => Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt()),
        NormKind::LInf => Ok(v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))),
        NormKind::Ellipsoid => {
            let shapes = spec.ellipsoid.as_ref().ok_or(NormError::MissingShapeMatrix)?;
            let m = shapes
                .shape_matrices
                .get(t)
                .ok_or(NormError::TimeOutOfRange { t, horizon: shapes.shape_matrices.len() })?;
            if m.nrows() != v.len() {
                return Err(NormError::DimensionMismatch { expected: m.nrows(), found: v.len() });
            }
            let mut quad = 0.0;
            for i in 0..v.len() {
                let mut row = 0.0;
                for j in 0..v.len() {
                    row += m[(i, j)] * v[j];
                }
                quad += v[i] * row;
            }
            // PSD round-off can leave a tiny negative quadratic form
            Ok(quad.max(0.0).sqrt())
        }
    }
}

/// Normed residual series: entry `t` is the norm of column `t`.
pub fn compute_normed_residuals(series: &ResidualSeries, spec: &NormSpec) -> Result<Vec<f64>, NormError> {
    if let Some(h) = spec.horizon() {
        if h != series.horizon() {
            return Err(NormError::DimensionMismatch { expected: h, found: series.horizon() });
        }
    }
    (0..series.horizon()).map(|t| norm_eval(series.column(t), spec, t)).collect()
}

/// Pseudo-inverse of a symmetric positive-semidefinite matrix with a
/// relative singular-value cutoff. Returns the pseudo-inverse, retained
/// singular values (descending) and the rank.
///
/// For symmetric PSD input the singular value decomposition coincides with
/// the eigendecomposition, and the symmetric solver keeps the left and right
/// singular vectors identical, which the general SVD does not guarantee.
/// Negative eigenvalues (round-off on a PSD matrix) count as their magnitude.
pub fn pseudo_inverse(m: &DMatrix<f64>, rank_tolerance: f64) -> (DMatrix<f64>, Vec<f64>, usize) {
    let n = m.nrows();
    if m.iter().all(|v| *v == 0.0) {
        return (DMatrix::zeros(n, n), Vec::new(), 0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let singular: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let sigma_max = singular.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]));

    let mut pinv = DMatrix::zeros(n, n);
    let mut kept = Vec::new();
    let cutoff = rank_tolerance * sigma_max;
    for &k in &order {
        let s = singular[k];
        let lambda = eig.eigenvalues[k];
        if s > cutoff && s > 0.0 {
            kept.push(s);
            let vk = eig.eigenvectors.column(k);
            pinv += (vk * vk.transpose()) / lambda;
        }
    }
    let pinv = (&pinv + pinv.transpose()) * 0.5;
    let rank = kept.len();
    (pinv, kept, rank)
}

/// Second-moment matrix of the residual vectors at time `t`, summed in a
/// canonical order so the result does not depend on dataset order.
pub fn second_moment_at(dataset: &[ResidualSeries], t: usize) -> DMatrix<f64> {
    let d = dataset[0].dims();
    let mut columns: Vec<&[f64]> = dataset.iter().map(|s| s.column(t)).collect();
    columns.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut m = DMatrix::zeros(d, d);
    for x in columns {
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += x[i] * x[j];
            }
        }
    }
    m / dataset.len() as f64
}

/// Fits one ellipsoid norm per time step from the uncentered second moment
/// of the residuals. Rank-deficient steps are kept; see [`NormSpec::degenerate_times`].
pub fn fit_ellipsoid_norms(dataset: &[ResidualSeries], rank_tolerance: f64) -> Result<NormSpec, NormError> {
    let first = dataset.first().ok_or(NormError::EmptyDataset)?;
    let (d, horizon) = (first.dims(), first.horizon());
    for s in dataset {
        if s.dims() != d {
            return Err(NormError::DimensionMismatch { expected: d, found: s.dims() });
        }
        if s.horizon() != horizon {
            return Err(NormError::DimensionMismatch { expected: horizon, found: s.horizon() });
        }
    }
    if !(0.0..1.0).contains(&rank_tolerance) {
        return Err(NormError::InvalidSpec(format!("rank_tolerance {rank_tolerance} outside [0, 1)")));
    }
    let mut shapes = EllipsoidShapes {
        shape_matrices: Vec::with_capacity(horizon),
        singular_values: Vec::with_capacity(horizon),
        ranks: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let moment = second_moment_at(dataset, t);
        let (pinv, sv, rank) = pseudo_inverse(&moment, rank_tolerance);
        shapes.shape_matrices.push(pinv);
        shapes.singular_values.push(sv);
        shapes.ranks.push(rank);
    }
    Ok(NormSpec { kind: NormKind::Ellipsoid, rank_tolerance, ellipsoid: Some(shapes) })
}
