//! Coverage and volume metrics, plus a per-time Bonferroni comparator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{contains, fit, order_statistic, CalibrationError, ConformalPredictor, FitOptions};
use crate::norms::{NormKind, NormSpec, ResidualSeries};
use crate::selector::{quantile_index, SelectError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{nominals} nominal trajectories but {truths} true trajectories")]
    UnpairedTestSet { nominals: usize, truths: usize },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Volume of the unit Euclidean ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    let (mut even, mut odd) = (1.0, 2.0);
    for k in 2..=d {
        if k.is_multiple_of(2) {
            even *= 2.0 * PI / k as f64;
        } else {
            odd *= 2.0 * PI / k as f64;
        }
    }
    if d.is_multiple_of(2) {
        even
    } else {
        odd
    }
}

fn factorial(d: usize) -> f64 {
    (1..=d).fold(1.0, |acc, k| acc * k as f64)
}

/// Lebesgue measure of `{v : ||v|| <= radius}` at step `t`.
///
/// For a rank-deficient ellipsoid the measure in `R^d` is zero; the volume
/// inside the retained subspace is returned instead and the step shows up
/// in [`NormSpec::degenerate_times`].
pub fn region_volume(radius: f64, norm: &NormSpec, t: usize, d: usize) -> f64 {
    let d_i = d as i32;
    match norm.kind {
        NormKind::L2 => unit_ball_volume(d) * radius.powi(d_i),
        NormKind::LInf => (2.0 * radius).powi(d_i),
        NormKind::L1 => (2.0 * radius).powi(d_i) / factorial(d),
        NormKind::Ellipsoid => match &norm.ellipsoid {
            Some(shapes) => {
                let rank = shapes.ranks[t];
                let stretch = shapes.singular_values[t].iter().fold(1.0, |acc, s| acc * s.sqrt());
                unit_ball_volume(rank) * radius.powi(rank as i32) * stretch
            }
            None => f64::NAN,
        },
    }
}

fn check_pairs(nominals: &[ResidualSeries], truths: &[ResidualSeries]) -> Result<(), EvaluationError> {
    if nominals.len() != truths.len() {
        return Err(EvaluationError::UnpairedTestSet { nominals: nominals.len(), truths: truths.len() });
    }
    if nominals.is_empty() {
        return Err(EvaluationError::EmptyTestSet);
    }
    Ok(())
}

/// Number of test pairs whose true trajectory lies in every region.
pub fn covered_count(
    predictor: &ConformalPredictor,
    nominals: &[ResidualSeries],
    truths: &[ResidualSeries],
) -> Result<usize, EvaluationError> {
    check_pairs(nominals, truths)?;
    let mut covered = 0;
    for (nominal, truth) in nominals.iter().zip(truths) {
        let regions = predictor.predict_regions(nominal)?;
        if contains(&regions, truth)? {
            covered += 1;
        }
    }
    Ok(covered)
}

pub fn empirical_coverage(
    predictor: &ConformalPredictor,
    nominals: &[ResidualSeries],
    truths: &[ResidualSeries],
) -> Result<f64, EvaluationError> {
    let covered = covered_count(predictor, nominals, truths)?;
    Ok(covered as f64 / nominals.len() as f64)
}

/// Mean over test nominals of the summed per-step volumes. Radii do not
/// depend on the nominal, so every term of the mean is the same.
pub fn total_volume(predictor: &ConformalPredictor, nominals: &[ResidualSeries]) -> Result<f64, EvaluationError> {
    if nominals.is_empty() {
        return Err(EvaluationError::EmptyTestSet);
    }
    let mut sum = 0.0;
    for nominal in nominals {
        let regions = predictor.predict_regions(nominal)?;
        sum += regions
            .radii
            .iter()
            .enumerate()
            .fold(0.0, |acc, (t, &rho)| acc + region_volume(rho, &predictor.norm, t, predictor.dims));
    }
    Ok(sum / nominals.len() as f64)
}

pub fn average_radius(predictor: &ConformalPredictor) -> f64 {
    let (radii, _) = predictor.region_radii();
    radii.iter().sum::<f64>() / radii.len() as f64
}

/// Per-time conformal radii at level `epsilon / T`. `normed` is row-major,
/// `n` rows of length `horizon`.
pub fn bonferroni_baseline(normed: &[Vec<f64>], epsilon: f64) -> Result<Vec<f64>, EvaluationError> {
    let n = normed.len();
    let horizon = normed.first().map_or(0, Vec::len);
    if horizon == 0 {
        return Err(SelectError::InvalidProblem("no time steps".into()).into());
    }
    let p = quantile_index(epsilon / horizon as f64, n)?;
    Ok((0..horizon)
        .map(|t| {
            let column: Vec<f64> = normed.iter().map(|row| row[t]).collect();
            order_statistic(&column, p)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub coverage: f64,
    pub total_volume: f64,
    pub avg_radius: f64,
    pub solve_nodes: u64,
    pub solve_millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub coverage: f64,
    pub covered: usize,
    pub test_size: usize,
    pub total_volume: f64,
    pub avg_radius: f64,
    pub degenerate_times: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_epsilon: Option<Vec<SweepRow>>,
}

impl EvaluationReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn evaluate(
    predictor: &ConformalPredictor,
    nominals: &[ResidualSeries],
    truths: &[ResidualSeries],
) -> Result<EvaluationReport, EvaluationError> {
    let covered = covered_count(predictor, nominals, truths)?;
    Ok(EvaluationReport {
        coverage: covered as f64 / nominals.len() as f64,
        covered,
        test_size: nominals.len(),
        total_volume: total_volume(predictor, nominals)?,
        avg_radius: average_radius(predictor),
        degenerate_times: predictor.norm.degenerate_times(predictor.dims),
        per_epsilon: None,
    })
}

/// Refits at every epsilon of `grid` and evaluates on the same test set.
/// Returns the rows together with each fitted predictor.
pub fn sweep(
    calibration: &[ResidualSeries],
    base: &FitOptions,
    grid: &[f64],
    nominals: &[ResidualSeries],
    truths: &[ResidualSeries],
) -> Result<Vec<(SweepRow, ConformalPredictor)>, EvaluationError> {
    let mut out = Vec::with_capacity(grid.len());
    for &epsilon in grid {
        let fitted = fit(calibration, &FitOptions { epsilon, ..base.clone() })?;
        let report = evaluate(&fitted.predictor, nominals, truths)?;
        let row = SweepRow {
            epsilon,
            coverage: report.coverage,
            total_volume: report.total_volume,
            avg_radius: report.avg_radius,
            solve_nodes: fitted.solve_stats.nodes,
            solve_millis: fitted.solve_stats.elapsed.as_secs_f64() * 1e3,
        };
        out.push((row, fitted.predictor));
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
}
