//! Command-line front end. Summaries go to stdout, diagnostics to stderr,
//! machine-readable output only to files.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 insufficient data
//! for the requested epsilon, 4 solver node limit (best incumbent written).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibration::{fit, CalibrationError, ConformalPredictor, FitOptions, DEFAULT_SPLIT_RATIO};
use crate::dataio::{
    generate_synthetic, load_dataset, save_dataset, DataError, Dataset, Format, SynthConfig, SynthModel,
};
use crate::evaluation::{evaluate, sweep, sweep_csv, EvaluationError, SweepRow};
use crate::norms::{
    compute_normed_residuals, fit_ellipsoid_norms, NormError, NormKind, NormSpec, DEFAULT_RANK_TOLERANCE,
};
use crate::selector::{
    brute_force_radii, export_milp, solve_optimal_radii, SelectError, SelectionProblem, SolveOptions,
    DEFAULT_ENUMERATION_CAP, DEFAULT_NODE_LIMIT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INSUFFICIENT: i32 = 3;
pub const EXIT_NODE_LIMIT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "oscp", version, about = "Conformal prediction regions for multi-dimensional time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic residual dataset
    Generate(GenerateArgs),
    /// Fit a predictor on a calibration dataset and write the artifact
    Fit(FitArgs),
    /// Write per-step regions for a file of nominal trajectories
    Predict(PredictArgs),
    /// Coverage and volume of a predictor on a test set
    Evaluate(EvaluateArgs),
    /// Refit over an epsilon grid and write one CSV row per epsilon
    Sweep(SweepArgs),
    /// Solve the radius selection problem for a dataset directly
    Solve(SolveArgs),
    /// Convert a dataset between JSON and CSV
    Export(ExportArgs),
    /// Residuals as truth minus nominal, series by series
    Residuals(ResidualsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, short = 'd')]
    pub dims: usize,
    /// Number of time steps T
    #[arg(long)]
    pub horizon: usize,
    /// Number of series N
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value = "iid_gaussian")]
    pub model: SynthModel,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ar_coefficient: f64,
    /// Per-step multiplicative growth of sigma
    #[arg(long, default_value_t = 0.0)]
    pub ramp: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// json or csv; inferred from the extension when omitted
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args, Clone)]
pub struct FitFlags {
    #[arg(long, value_parser = parse_norm, default_value = "l2")]
    pub norm: NormKind,
    #[arg(long, default_value_t = DEFAULT_SPLIT_RATIO, value_parser = parse_open_unit)]
    pub split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RANK_TOLERANCE)]
    pub rank_tolerance: f64,
    /// Search the full selection problem without the reduction step
    #[arg(long)]
    pub no_prune: bool,
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    pub node_limit: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_open_unit)]
    pub epsilon: f64,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Omit the created_at field so reruns are byte-identical
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub nominal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub test_nominal: PathBuf,
    #[arg(long)]
    pub test_true: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also append the result as a sweep CSV row (or all rows with --epsilon-grid)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// "start:end:count", inclusive linear spacing; refits on --data at each value
    #[arg(long, value_parser = parse_grid, requires = "data")]
    pub epsilon_grid: Option<EpsilonGrid>,
    /// Calibration dataset for --epsilon-grid
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test_nominal: PathBuf,
    #[arg(long)]
    pub test_true: PathBuf,
    /// "start:end:count", inclusive linear spacing
    #[arg(long, value_parser = parse_grid)]
    pub epsilon_grid: EpsilonGrid,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub p1: usize,
    /// Norm applied to the residuals; an ellipsoid is fitted on the whole file
    #[arg(long, value_parser = parse_norm, default_value = "l2")]
    pub norm: NormKind,
    #[arg(long)]
    pub no_prune: bool,
    /// Enumerate every subset instead of branch and bound
    #[arg(long)]
    pub brute_force: bool,
    #[arg(long)]
    pub export_lp: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    pub node_limit: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ResidualsArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub nominal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<Format>,
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    s.parse::<NormKind>().map_err(|e| e.to_string())
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

/// Epsilon values of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGrid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<EpsilonGrid, String> {
    parse_grid_values(s).map(EpsilonGrid)
}

/// Parses `start:end:count` into `count` evenly spaced values, both ends included.
pub fn parse_grid_values(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid '{s}' is not start:end:count"));
    }
    let start = parse_open_unit(parts[0])?;
    let end = parse_open_unit(parts[1])?;
    let count: usize = parts[2].parse().map_err(|_| format!("bad count '{}'", parts[2]))?;
    match count {
        0 => Err("grid count must be positive".into()),
        1 => Ok(vec![start]),
        _ => {
            let step = (end - start) / (count - 1) as f64;
            Ok((0..count).map(|k| if k + 1 == count { end } else { start + step * k as f64 }).collect())
        }
    }
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<NormError> for CliError {
    fn from(e: NormError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        let code = match e {
            SelectError::InsufficientData { .. } => EXIT_INSUFFICIENT,
            SelectError::InvalidEpsilon(_) | SelectError::InvalidProblem(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Select(inner) => inner.into(),
            CalibrationError::InsufficientData { .. } => CliError { code: EXIT_INSUFFICIENT, message: e.to_string() },
            CalibrationError::InvalidArgument(_) => CliError::usage(e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Calibration(inner) => inner.into(),
            EvaluationError::Select(inner) => inner.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    Ok(load_dataset(path, Format::from_path(path))?)
}

fn load_predictor(path: &Path) -> Result<ConformalPredictor, CliError> {
    Ok(ConformalPredictor::from_json_str(&read_file(path)?)?)
}

fn check_norm_dims(kind: NormKind, dims: usize) -> Result<(), CliError> {
    if kind == NormKind::Ellipsoid && dims == 1 {
        return Err(CliError::usage("the ellipsoid norm needs d >= 2; use l2 for one-dimensional data"));
    }
    Ok(())
}

fn fit_options(epsilon: f64, flags: &FitFlags) -> FitOptions {
    FitOptions {
        epsilon,
        norm: flags.norm,
        split_ratio: flags.split_ratio,
        seed: flags.seed,
        rank_tolerance: flags.rank_tolerance,
        solve: SolveOptions { prune: !flags.no_prune, node_limit: flags.node_limit },
    }
}

fn fmt_list<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Fit(a) => cmd_fit(a, out, err),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out, err),
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Solve(a) => cmd_solve(a, out, err),
        Command::Export(a) => cmd_export(a, out),
        Command::Residuals(a) => cmd_residuals(a, out),
    }
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = SynthConfig::new(a.dims, a.horizon, a.count, a.model, a.seed);
    config.sigma = a.sigma;
    config.ar_coefficient = a.ar_coefficient;
    config.heteroscedastic_ramp = a.ramp;
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let dataset = generate_synthetic(&config)?;
    save_dataset(&dataset, &a.out, a.format.unwrap_or_else(|| Format::from_path(&a.out)))?;
    let _ = writeln!(out, "generated N={} T={} d={} -> {}", a.count, a.horizon, a.dims, a.out.display());
    Ok(EXIT_OK)
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let dataset = load(&a.data)?;
    check_norm_dims(a.flags.norm, dataset.dims())?;
    let fitted = fit(dataset.series(), &fit_options(a.epsilon, &a.flags))?;
    let mut predictor = fitted.predictor;
    if !a.no_timestamp {
        predictor.created_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    write_file(&a.out, &predictor.to_json_string())?;
    let _ = writeln!(
        out,
        "p1={} p2={} n1={} n2={} cost={} inflation={} optimal={}",
        predictor.p1,
        predictor.p2,
        predictor.n1,
        predictor.n2,
        predictor.radii.cost,
        predictor.inflation,
        predictor.radii.provably_optimal
    );
    let (_, empty) = predictor.region_radii();
    if empty.iter().any(|&e| e) {
        let _ = writeln!(err, "warning: negative inflation left some regions empty (radius clamped to 0)");
    }
    if fitted.solve_stats.node_limit_hit {
        let _ = writeln!(err, "warning: node limit reached; radii are the best found, not proven optimal");
        return Ok(EXIT_NODE_LIMIT);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RegionsFile {
    norm: NormKind,
    d: usize,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(rename = "N")]
    count: usize,
    radii: Vec<f64>,
    empty: Vec<bool>,
    centers: Vec<Vec<Vec<f64>>>,
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let predictor = load_predictor(&a.predictor)?;
    let nominals = load(&a.nominal)?;
    let mut centers = Vec::with_capacity(nominals.len());
    let mut regions = None;
    for nominal in nominals.series() {
        let r = predictor.predict_regions(nominal)?;
        centers.push((0..nominal.horizon()).map(|t| nominal.column(t).to_vec()).collect());
        regions = Some(r);
    }
    let regions = regions.ok_or_else(|| CliError::data("no nominal trajectories"))?;
    let file = RegionsFile {
        norm: predictor.norm.kind,
        d: predictor.dims,
        horizon: predictor.horizon,
        count: centers.len(),
        radii: regions.radii.clone(),
        empty: regions.empty.clone(),
        centers,
    };
    write_file(&a.out, &serde_json::to_string_pretty(&file).expect("regions serialize"))?;
    let _ = writeln!(out, "regions for {} trajectories, radii {}", file.count, fmt_list(&file.radii));
    Ok(EXIT_OK)
}

fn load_test_set(nominal: &Path, truth: &Path) -> Result<(Dataset, Dataset), CliError> {
    let nominals = load(nominal)?;
    let truths = load(truth)?;
    if nominals.len() != truths.len() || nominals.dims() != truths.dims() || nominals.horizon() != truths.horizon() {
        return Err(CliError::data(format!(
            "test files differ in shape: N={} T={} d={} vs N={} T={} d={}",
            nominals.len(),
            nominals.horizon(),
            nominals.dims(),
            truths.len(),
            truths.horizon(),
            truths.dims()
        )));
    }
    Ok((nominals, truths))
}

fn warn_if_not_monotone(rows: &[(SweepRow, ConformalPredictor)], err: &mut dyn Write) {
    let mut sorted: Vec<&(SweepRow, ConformalPredictor)> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.epsilon.total_cmp(&b.0.epsilon));
    for pair in sorted.windows(2) {
        let (lo, hi) = (pair[0].1.region_radii().0, pair[1].1.region_radii().0);
        if lo.iter().zip(&hi).any(|(a, b)| b > a) {
            let _ = writeln!(
                err,
                "note: some region radius grows from epsilon {} to {}",
                pair[0].0.epsilon, pair[1].0.epsilon
            );
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let predictor = load_predictor(&a.predictor)?;
    let (nominals, truths) = load_test_set(&a.test_nominal, &a.test_true)?;
    let mut report = evaluate(&predictor, nominals.series(), truths.series())?;
    let mut rows = Vec::new();
    if let (Some(grid), Some(data)) = (&a.epsilon_grid, &a.data) {
        let calibration = load(data)?;
        let mut base = FitOptions::new(predictor.epsilon, predictor.norm.kind, predictor.seed);
        base.rank_tolerance = predictor.norm.rank_tolerance;
        base.split_ratio = predictor.n1 as f64 / (predictor.n1 + predictor.n2) as f64;
        if calibration.len() != predictor.n1 + predictor.n2 {
            base.split_ratio = DEFAULT_SPLIT_RATIO;
        }
        let swept = sweep(calibration.series(), &base, &grid.0, nominals.series(), truths.series())?;
        warn_if_not_monotone(&swept, err);
        rows = swept.into_iter().map(|(row, _)| row).collect();
        report.per_epsilon = Some(rows.clone());
    } else if a.csv.is_some() {
        rows.push(SweepRow {
            epsilon: predictor.epsilon,
            coverage: report.coverage,
            total_volume: report.total_volume,
            avg_radius: report.avg_radius,
            solve_nodes: 0,
            solve_millis: 0.0,
        });
    }
    write_file(&a.out, &report.to_json_string())?;
    if let Some(path) = &a.csv {
        write_file(path, &sweep_csv(&rows))?;
    }
    let _ = writeln!(
        out,
        "coverage={} ({}/{}) total_volume={} avg_radius={}",
        report.coverage, report.covered, report.test_size, report.total_volume, report.avg_radius
    );
    if !report.degenerate_times.is_empty() {
        let _ = writeln!(err, "note: rank-deficient ellipsoid at t = {}", fmt_list(&report.degenerate_times));
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let calibration = load(&a.data)?;
    check_norm_dims(a.flags.norm, calibration.dims())?;
    let (nominals, truths) = load_test_set(&a.test_nominal, &a.test_true)?;
    let base = fit_options(a.epsilon_grid.0[0], &a.flags);
    let swept = sweep(calibration.series(), &base, &a.epsilon_grid.0, nominals.series(), truths.series())?;
    warn_if_not_monotone(&swept, err);
    let rows: Vec<SweepRow> = swept.iter().map(|(row, _)| row.clone()).collect();
    write_file(&a.out, &sweep_csv(&rows))?;
    let _ = writeln!(out, "{} epsilon values -> {}", rows.len(), a.out.display());
    if swept.iter().any(|(_, p)| !p.radii.provably_optimal) {
        let _ = writeln!(err, "warning: node limit reached for at least one epsilon");
        return Ok(EXIT_NODE_LIMIT);
    }
    Ok(EXIT_OK)
}

fn cmd_solve(a: SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let dataset = load(&a.data)?;
    check_norm_dims(a.norm, dataset.dims())?;
    let norm = match a.norm {
        NormKind::Ellipsoid => fit_ellipsoid_norms(dataset.series(), DEFAULT_RANK_TOLERANCE)?,
        kind => NormSpec::new(kind),
    };
    let mut flat = Vec::with_capacity(dataset.len() * dataset.horizon());
    for s in dataset.series() {
        flat.extend(compute_normed_residuals(s, &norm)?);
    }
    let problem = SelectionProblem::from_flat(dataset.len(), dataset.horizon(), flat, a.p1)?;
    if let Some(path) = &a.export_lp {
        write_file(path, &export_milp(&problem, !a.no_prune))?;
    }
    let start = Instant::now();
    let (profile, nodes, limit_hit) = if a.brute_force {
        (brute_force_radii(&problem, DEFAULT_ENUMERATION_CAP)?, 0, false)
    } else {
        let solution = solve_optimal_radii(&problem, &SolveOptions { prune: !a.no_prune, node_limit: a.node_limit })?;
        (solution.profile, solution.stats.nodes, solution.stats.node_limit_hit)
    };
    let millis = start.elapsed().as_secs_f64() * 1e3;
    let _ = writeln!(out, "cost={}", profile.cost);
    let _ = writeln!(out, "radii={}", fmt_list(&profile.radii));
    let _ = writeln!(out, "selected={}", fmt_list(&profile.selected));
    let _ = writeln!(out, "nodes={nodes} millis={millis:.3} optimal={}", profile.provably_optimal);
    if limit_hit {
        let _ = writeln!(err, "warning: node limit reached; result not proven optimal");
        return Ok(EXIT_NODE_LIMIT);
    }
    Ok(EXIT_OK)
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let dataset = load(&a.data)?;
    save_dataset(&dataset, &a.out, a.format.unwrap_or_else(|| Format::from_path(&a.out)))?;
    let _ = writeln!(out, "wrote {} series -> {}", dataset.len(), a.out.display());
    Ok(EXIT_OK)
}

fn cmd_residuals(a: ResidualsArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let truth = load(&a.truth)?;
    let nominal = load(&a.nominal)?;
    let residuals = truth.difference(&nominal)?;
    save_dataset(&residuals, &a.out, a.format.unwrap_or_else(|| Format::from_path(&a.out)))?;
    let _ = writeln!(out, "wrote {} residual series -> {}", residuals.len(), a.out.display());
    Ok(EXIT_OK)
}
