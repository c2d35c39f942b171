//! Residual dataset files and seeded synthetic generators.
//!
//! JSON layout: `{"d": .., "T": .., "N": .., "series": [N][T][d]}`.
//! CSV layout: header `series_id,t,dim_0,..,dim_{d-1}`, one row per
//! `(series, t)`, written sorted by `(series_id, t)`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::norms::ResidualSeries;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("shape error: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("non-finite value at series {series}, t {t}, dim {dim}")]
    NonFiniteValue { series: usize, t: usize, dim: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}'")),
        }
    }
}

/// A collection of equally shaped trajectories (residuals or nominals).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dims: usize,
    horizon: usize,
    series: Vec<ResidualSeries>,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    d: usize,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(rename = "N")]
    count: usize,
    series: Vec<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn new(series: Vec<ResidualSeries>) -> Result<Self, DataError> {
        let first = series
            .first()
            .ok_or_else(|| DataError::Shape { expected: "at least one series".into(), found: "0".into() })?;
        let (dims, horizon) = (first.dims(), first.horizon());
        for (i, s) in series.iter().enumerate() {
            if s.dims() != dims || s.horizon() != horizon {
                return Err(DataError::Shape {
                    expected: format!("d={dims}, T={horizon}"),
                    found: format!("series {i}: d={}, T={}", s.dims(), s.horizon()),
                });
            }
        }
        Ok(Self { dims, horizon, series })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series(&self) -> &[ResidualSeries] {
        &self.series
    }

    pub fn into_series(self) -> Vec<ResidualSeries> {
        self.series
    }

    /// Pairwise `self - other`, e.g. true trajectories minus nominal ones.
    pub fn difference(&self, other: &Dataset) -> Result<Dataset, DataError> {
        if self.len() != other.len() {
            return Err(DataError::Shape {
                expected: format!("N={}", self.len()),
                found: format!("N={}", other.len()),
            });
        }
        let series = self
            .series
            .iter()
            .zip(&other.series)
            .map(|(a, b)| {
                a.difference(b).map_err(|e| DataError::Shape {
                    expected: format!("d={}, T={}", self.dims, self.horizon),
                    found: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(series)
    }

    pub fn from_json_str(text: &str) -> Result<Dataset, DataError> {
        let raw: DatasetJson = serde_json::from_str(text).map_err(|e| DataError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if raw.d == 0 || raw.horizon == 0 || raw.count == 0 {
            return Err(DataError::Shape {
                expected: "d, T, N >= 1".into(),
                found: format!("d={}, T={}, N={}", raw.d, raw.horizon, raw.count),
            });
        }
        if raw.series.len() != raw.count {
            return Err(DataError::Shape {
                expected: format!("N={} series", raw.count),
                found: format!("{} series", raw.series.len()),
            });
        }
        let mut series = Vec::with_capacity(raw.count);
        for (i, steps) in raw.series.into_iter().enumerate() {
            if steps.len() != raw.horizon {
                return Err(DataError::Shape {
                    expected: format!("T={} steps", raw.horizon),
                    found: format!("series {i} has {} steps", steps.len()),
                });
            }
            let mut values = Vec::with_capacity(raw.d * raw.horizon);
            for (t, v) in steps.into_iter().enumerate() {
                if v.len() != raw.d {
                    return Err(DataError::Shape {
                        expected: format!("d={}", raw.d),
                        found: format!("series {i}, t {t} has {} values", v.len()),
                    });
                }
                values.extend(v);
            }
            series.push(build_series(i, raw.d, raw.horizon, values)?);
        }
        Dataset::new(series)
    }

    pub fn to_json_string(&self) -> String {
        let raw = DatasetJson {
            d: self.dims,
            horizon: self.horizon,
            count: self.len(),
            series: self.series.iter().map(|s| (0..self.horizon).map(|t| s.column(t).to_vec()).collect()).collect(),
        };
        serde_json::to_string(&raw).expect("dataset serializes")
    }

    pub fn from_csv_str(text: &str) -> Result<Dataset, DataError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(csv_error)?.clone();
        let names: Vec<&str> = headers.iter().collect();
        if names.len() < 3 || names[0] != "series_id" || names[1] != "t" {
            return Err(DataError::Parse {
                line: 1,
                column: 1,
                message: "header must be series_id,t,dim_0,...".into(),
            });
        }
        for (k, name) in names[2..].iter().enumerate() {
            if *name != format!("dim_{k}") {
                return Err(DataError::Parse {
                    line: 1,
                    column: k + 3,
                    message: format!("expected column dim_{k}, found '{name}'"),
                });
            }
        }
        let dims = names.len() - 2;
        let mut entries: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != dims + 2 {
                return Err(DataError::Shape {
                    expected: format!("{} fields", dims + 2),
                    found: format!("{} fields on line {line}", record.len()),
                });
            }
            let int = |col: usize| -> Result<usize, DataError> {
                record[col].parse::<usize>().map_err(|e| DataError::Parse {
                    line,
                    column: col + 1,
                    message: e.to_string(),
                })
            };
            let (sid, t) = (int(0)?, int(1)?);
            let mut values = Vec::with_capacity(dims);
            for col in 2..dims + 2 {
                let v: f64 = record[col].parse().map_err(|e: std::num::ParseFloatError| DataError::Parse {
                    line,
                    column: col + 1,
                    message: e.to_string(),
                })?;
                values.push(v);
            }
            entries.push((sid, t, values));
        }
        if entries.is_empty() {
            return Err(DataError::Shape { expected: "at least one row".into(), found: "0 rows".into() });
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let count = entries.iter().map(|e| e.0).max().unwrap_or(0) + 1;
        let horizon = entries.iter().map(|e| e.1).max().unwrap_or(0) + 1;
        if entries.len() != count * horizon {
            return Err(DataError::Shape {
                expected: format!("{} rows for N={count}, T={horizon}", count * horizon),
                found: format!("{} rows", entries.len()),
            });
        }
        let mut series = Vec::with_capacity(count);
        for (i, chunk) in entries.chunks(horizon).enumerate() {
            let mut values = Vec::with_capacity(dims * horizon);
            for (t, (sid, tt, v)) in chunk.iter().enumerate() {
                if *sid != i || *tt != t {
                    return Err(DataError::Shape {
                        expected: format!("row (series {i}, t {t})"),
                        found: format!("(series {sid}, t {tt})"),
                    });
                }
                values.extend(v);
            }
            series.push(build_series(i, dims, horizon, values)?);
        }
        Dataset::new(series)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("series_id,t");
        for k in 0..self.dims {
            out.push_str(&format!(",dim_{k}"));
        }
        out.push('\n');
        for (i, s) in self.series.iter().enumerate() {
            for t in 0..self.horizon {
                out.push_str(&format!("{i},{t}"));
                for v in s.column(t) {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn build_series(index: usize, dims: usize, horizon: usize, values: Vec<f64>) -> Result<ResidualSeries, DataError> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteValue { series: index, t: pos / dims, dim: pos % dims });
    }
    ResidualSeries::from_columns(dims, horizon, values)
        .map_err(|e| DataError::Shape { expected: format!("d={dims}, T={horizon}"), found: e.to_string() })
}

fn csv_error(e: csv::Error) -> DataError {
    let (line, column) = e.position().map(|p| (p.line() as usize, 1)).unwrap_or((0, 0));
    DataError::Parse { line, column, message: e.to_string() }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    match format {
        Format::Json => Dataset::from_json_str(&text),
        Format::Csv => Dataset::from_csv_str(&text),
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<(), DataError> {
    let text = match format {
        Format::Json => dataset.to_json_string(),
        Format::Csv => dataset.to_csv_string(),
    };
    fs::write(path, text).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthModel {
    IidGaussian,
    Ar1,
}

impl std::str::FromStr for SynthModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid_gaussian" | "iid" => Ok(SynthModel::IidGaussian),
            "ar1" => Ok(SynthModel::Ar1),
            other => Err(format!("unknown model '{other}' (expected iid_gaussian or ar1)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub model: SynthModel,
    pub sigma: f64,
    pub ar_coefficient: f64,
    pub heteroscedastic_ramp: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(d: usize, horizon: usize, count: usize, model: SynthModel, seed: u64) -> Self {
        Self { d, horizon, count, model, sigma: 1.0, ar_coefficient: 0.0, heteroscedastic_ramp: 0.0, seed }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.d == 0 || self.horizon == 0 || self.count == 0 {
            return Err(DataError::InvalidConfig("d, T and N must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(DataError::InvalidConfig(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if !(self.ar_coefficient > -1.0 && self.ar_coefficient < 1.0) {
            return Err(DataError::InvalidConfig(format!("ar_coefficient {} outside (-1, 1)", self.ar_coefficient)));
        }
        if !(self.heteroscedastic_ramp.is_finite() && self.heteroscedastic_ramp >= 0.0) {
            return Err(DataError::InvalidConfig("heteroscedastic_ramp must be >= 0".into()));
        }
        Ok(())
    }
}

/// Independent, hence exchangeable, zero-mean Gaussian trajectories.
///
/// The marginal standard deviation at step `t` is `sigma (1 + ramp)^t` for
/// both models. `ar1` correlates consecutive steps of each coordinate with
/// the given coefficient while keeping those marginals.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (d, horizon) = (config.d, config.horizon);
    let scale: Vec<f64> =
        (0..horizon).map(|t| config.sigma * (1.0 + config.heteroscedastic_ramp).powi(t as i32)).collect();
    let phi = match config.model {
        SynthModel::IidGaussian => 0.0,
        SynthModel::Ar1 => config.ar_coefficient,
    };
    let innovation = (1.0 - phi * phi).sqrt();
    let mut series = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let mut values = vec![0.0; d * horizon];
        for k in 0..d {
            let mut prev = 0.0;
            for t in 0..horizon {
                let z: f64 = StandardNormal.sample(&mut rng);
                // standardized AR(1) state, unit marginal variance
                let state = if t == 0 { z } else { phi * prev + innovation * z };
                prev = state;
                // + 0.0 normalizes -0.0 when sigma is zero
                values[t * d + k] = state * scale[t] + 0.0;
            }
        }
        series.push(
            ResidualSeries::from_columns(d, horizon, values).map_err(|e| DataError::InvalidConfig(e.to_string()))?,
        );
    }
    Dataset::new(series)
}
