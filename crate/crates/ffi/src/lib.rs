//! C ABI over the `oscp` library.
//!
//! Every function returns an [`OscpStatus`]; results come back through out
//! pointers. On failure a message is available from
//! [`oscp_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their `_free` function. Trajectory buffers are
//! time-major: step `t`, coordinate `k` lives at index `t * d + k`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use oscp::calibration::{contains, fit, CalibrationError, ConformalPredictor, FitOptions};
use oscp::dataio::{load_dataset, DataError, Dataset, Format};
use oscp::norms::{NormError, NormKind, ResidualSeries};
use oscp::selector::{quantile_index, solve_optimal_radii, SelectError, SelectionProblem, SolveOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    InsufficientData = 4,
    DimensionMismatch = 5,
    NodeLimit = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscpNorm {
    L1 = 0,
    L2 = 1,
    Linf = 2,
    Ellipsoid = 3,
}

impl From<OscpNorm> for NormKind {
    fn from(n: OscpNorm) -> Self {
        match n {
            OscpNorm::L1 => NormKind::L1,
            OscpNorm::L2 => NormKind::L2,
            OscpNorm::Linf => NormKind::LInf,
            OscpNorm::Ellipsoid => NormKind::Ellipsoid,
        }
    }
}

/// Opaque collection of equally shaped trajectories.
pub struct OscpDataset(Dataset);

/// Opaque fitted predictor.
pub struct OscpPredictor(ConformalPredictor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(OscpStatus, String);

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let status = if matches!(e, DataError::Io { .. }) { OscpStatus::Io } else { OscpStatus::DataError };
        Failure(status, e.to_string())
    }
}

impl From<NormError> for Failure {
    fn from(e: NormError) -> Self {
        let status = match e {
            NormError::DimensionMismatch { .. } => OscpStatus::DimensionMismatch,
            _ => OscpStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

impl From<SelectError> for Failure {
    fn from(e: SelectError) -> Self {
        let status = match e {
            SelectError::InsufficientData { .. } => OscpStatus::InsufficientData,
            SelectError::InvalidEpsilon(_) | SelectError::InvalidProblem(_) => OscpStatus::InvalidArgument,
            _ => OscpStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        let status = match &e {
            CalibrationError::Select(inner) => return inner.clone().into(),
            CalibrationError::Norm(inner) => return inner.clone().into(),
            CalibrationError::InsufficientData { .. } => OscpStatus::InsufficientData,
            CalibrationError::DimensionMismatch { .. } => OscpStatus::DimensionMismatch,
            CalibrationError::InvalidArgument(_) => OscpStatus::InvalidArgument,
            CalibrationError::TooFewSeries(_) | CalibrationError::Artifact(_) => OscpStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OscpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(OscpStatus::InvalidArgument, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> OscpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => OscpStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OscpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn predictor_arg<'a>(p: *const OscpPredictor) -> Result<&'a ConformalPredictor, Failure> {
    p.as_ref().map(|h| &h.0).ok_or_else(|| null("predictor"))
}

fn trajectory(p: &ConformalPredictor, values: &[f64]) -> Result<ResidualSeries, Failure> {
    if values.len() != p.dims * p.horizon {
        return Err(Failure(
            OscpStatus::DimensionMismatch,
            format!("expected {} values (d={}, T={}), got {}", p.dims * p.horizon, p.dims, p.horizon, values.len()),
        ));
    }
    Ok(ResidualSeries::from_columns(p.dims, p.horizon, values.to_vec())?)
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oscp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// `ceil((1 - epsilon)(n + 1))`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_quantile_index(epsilon: f64, n: usize, out: *mut usize) -> OscpStatus {
    guard(|| {
        *out_arg(out, "out")? = quantile_index(epsilon, n)?;
        Ok(())
    })
}

/// Loads a JSON or CSV dataset, chosen by file extension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_dataset_load(path: *const c_char, out: *mut *mut OscpDataset) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = Path::new(str_arg(path, "path")?);
        let dataset = load_dataset(path, Format::from_path(path))?;
        *out = Box::into_raw(Box::new(OscpDataset(dataset)));
        Ok(())
    })
}

/// Builds a dataset from `count` time-major trajectories laid end to end.
///
/// # Safety
/// `values` must hold `count * horizon * dims` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oscp_dataset_from_values(
    values: *const f64,
    count: usize,
    horizon: usize,
    dims: usize,
    out: *mut *mut OscpDataset,
) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let stride = horizon.checked_mul(dims).ok_or_else(|| invalid("shape overflows"))?;
        let total = stride.checked_mul(count).ok_or_else(|| invalid("shape overflows"))?;
        if stride == 0 {
            return Err(invalid("dims and horizon must be positive"));
        }
        let values = slice_arg(values, total, "values")?;
        let series = values
            .chunks(stride)
            .map(|chunk| ResidualSeries::from_columns(dims, horizon, chunk.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(OscpDataset(Dataset::new(series)?)));
        Ok(())
    })
}

/// Writes the number of series, the horizon `T` and the dimension `d`.
///
/// # Safety
/// `dataset` must be a live handle; out pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn oscp_dataset_shape(
    dataset: *const OscpDataset,
    count: *mut usize,
    horizon: *mut usize,
    dims: *mut usize,
) -> OscpStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        for (p, v) in [(count, d.len()), (horizon, d.horizon()), (dims, d.dims())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oscp_dataset_free(dataset: *mut OscpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits a predictor. Returns `OSCP_STATUS_NODE_LIMIT` together with a
/// usable (not provably optimal) predictor when the solver budget runs out.
///
/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_fit(
    dataset: *const OscpDataset,
    epsilon: f64,
    norm: OscpNorm,
    split_ratio: f64,
    seed: u64,
    out: *mut *mut OscpPredictor,
) -> OscpStatus {
    let mut limit_hit = false;
    let status = guard(|| {
        let out = out_arg(out, "out")?;
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        if norm == OscpNorm::Ellipsoid && d.dims() == 1 {
            return Err(invalid("the ellipsoid norm needs d >= 2"));
        }
        let options = FitOptions { split_ratio, ..FitOptions::new(epsilon, norm.into(), seed) };
        let fitted = fit(d.series(), &options)?;
        limit_hit = fitted.solve_stats.node_limit_hit;
        *out = Box::into_raw(Box::new(OscpPredictor(fitted.predictor)));
        Ok(())
    });
    if status == OscpStatus::Ok && limit_hit {
        set_error("node limit reached; radii are not proven optimal");
        return OscpStatus::NodeLimit;
    }
    status
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_from_json(json: *const c_char, out: *mut *mut OscpPredictor) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let predictor = ConformalPredictor::from_json_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(OscpPredictor(predictor)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_load(path: *const c_char, out: *mut *mut OscpPredictor) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| Failure(OscpStatus::Io, format!("{path}: {e}")))?;
        *out = Box::into_raw(Box::new(OscpPredictor(ConformalPredictor::from_json_str(&text)?)));
        Ok(())
    })
}

/// # Safety
/// `predictor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_save(predictor: *const OscpPredictor, path: *const c_char) -> OscpStatus {
    guard(|| {
        let p = predictor_arg(predictor)?;
        let path = str_arg(path, "path")?;
        std::fs::write(path, p.to_json_string()).map_err(|e| Failure(OscpStatus::Io, format!("{path}: {e}")))
    })
}

/// Serializes the predictor. Release the string with [`oscp_string_free`].
///
/// # Safety
/// `predictor` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_to_json(predictor: *const OscpPredictor, out: *mut *mut c_char) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = CString::new(predictor_arg(predictor)?.to_json_string()).map_err(|e| invalid(e.to_string()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oscp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes `T` and `d`.
///
/// # Safety
/// `predictor` must be a live handle; out pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_shape(
    predictor: *const OscpPredictor,
    horizon: *mut usize,
    dims: *mut usize,
) -> OscpStatus {
    guard(|| {
        let p = predictor_arg(predictor)?;
        if let Some(h) = horizon.as_mut() {
            *h = p.horizon;
        }
        if let Some(d) = dims.as_mut() {
            *d = p.dims;
        }
        Ok(())
    })
}

/// Calibrated inflation; may be negative.
///
/// # Safety
/// `predictor` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_inflation(predictor: *const OscpPredictor, out: *mut f64) -> OscpStatus {
    guard(|| {
        *out_arg(out, "out")? = predictor_arg(predictor)?.inflation;
        Ok(())
    })
}

/// Region radii `max(0, inflation + r_t)`; `empty` (optional) receives the
/// clamp flags.
///
/// # Safety
/// `radii` and, when non-null, `empty` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_region_radii(
    predictor: *const OscpPredictor,
    radii: *mut f64,
    empty: *mut bool,
    len: usize,
) -> OscpStatus {
    guard(|| {
        let p = predictor_arg(predictor)?;
        if len != p.horizon {
            return Err(Failure(OscpStatus::DimensionMismatch, format!("len {len} but T = {}", p.horizon)));
        }
        if radii.is_null() {
            return Err(null("radii"));
        }
        let (r, e) = p.region_radii();
        std::slice::from_raw_parts_mut(radii, len).copy_from_slice(&r);
        if !empty.is_null() {
            std::slice::from_raw_parts_mut(empty, len).copy_from_slice(&e);
        }
        Ok(())
    })
}

/// Nonconformity score of a residual trajectory of `len = T * d` values.
///
/// # Safety
/// `residual` must hold `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_score(
    predictor: *const OscpPredictor,
    residual: *const f64,
    len: usize,
    out: *mut f64,
) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = predictor_arg(predictor)?;
        let series = trajectory(p, slice_arg(residual, len, "residual")?)?;
        *out = p.score(&series)?;
        Ok(())
    })
}

/// Whether `truth` lies in the regions centred on `nominal` at every step.
///
/// # Safety
/// `nominal` and `truth` must hold `len = T * d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_contains(
    predictor: *const OscpPredictor,
    nominal: *const f64,
    truth: *const f64,
    len: usize,
    out: *mut bool,
) -> OscpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = predictor_arg(predictor)?;
        let nominal = trajectory(p, slice_arg(nominal, len, "nominal")?)?;
        let truth = trajectory(p, slice_arg(truth, len, "truth")?)?;
        *out = contains(&p.predict_regions(&nominal)?, &truth)?;
        Ok(())
    })
}

/// # Safety
/// `predictor` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oscp_predictor_free(predictor: *mut OscpPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Optimal radii for a row-major `rows × horizon` matrix of normed
/// residuals. `selected` receives the `p1` covered rows in ascending order.
/// Returns `OSCP_STATUS_NODE_LIMIT` (with results written) when the search
/// budget runs out; pass 0 for the default budget.
///
/// # Safety
/// `values` must hold `rows * horizon` doubles, `radii` `horizon` doubles,
/// `selected` `p1` entries; `cost` may be null.
#[no_mangle]
pub unsafe extern "C" fn oscp_solve_radii(
    values: *const f64,
    rows: usize,
    horizon: usize,
    p1: usize,
    prune: bool,
    node_limit: u64,
    radii: *mut f64,
    selected: *mut usize,
    cost: *mut f64,
) -> OscpStatus {
    let mut limit_hit = false;
    let status = guard(|| {
        let total = rows.checked_mul(horizon).ok_or_else(|| invalid("shape overflows"))?;
        let values = slice_arg(values, total, "values")?;
        if radii.is_null() || selected.is_null() {
            return Err(null("radii or selected"));
        }
        let problem = SelectionProblem::from_flat(rows, horizon, values.to_vec(), p1)?;
        let mut options = SolveOptions { prune, ..SolveOptions::default() };
        if node_limit > 0 {
            options.node_limit = node_limit;
        }
        let solution = solve_optimal_radii(&problem, &options)?;
        limit_hit = solution.stats.node_limit_hit;
        std::slice::from_raw_parts_mut(radii, horizon).copy_from_slice(&solution.profile.radii);
        std::slice::from_raw_parts_mut(selected, p1).copy_from_slice(&solution.profile.selected);
        if let Some(c) = cost.as_mut() {
            *c = solution.profile.cost;
        }
        Ok(())
    });
    if status == OscpStatus::Ok && limit_hit {
        set_error("node limit reached; radii are not proven optimal");
        return OscpStatus::NodeLimit;
    }
    status
}
