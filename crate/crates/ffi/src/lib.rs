//! C interface to `plan_iv`.
//!
//! Every fallible call returns a [`PlanIvStatus`]; on failure the message is
//! kept per thread and read back with [`plan_iv_last_error`]. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `*_free` function. Strings handed out by the library are released with
//! [`plan_iv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use plan_iv::apps::AppInstance;
use plan_iv::bench::{fit_dataset, plan_fits, ExperimentConfig};
use plan_iv::env::{collect_dataset, OfflineDataset};
use plan_iv::iv::{fit_2sls, minimax_loss_linear, threshold_linear, FitSet, StageDesign, TargetTag, ThresholdConfig};
use plan_iv::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanIvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Dimension = 4,
    Degenerate = 5,
    Numerical = 6,
    Precondition = 7,
    Io = 8,
    Json = 9,
    Panic = 10,
}

impl From<&Error> for PlanIvStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => Self::Config,
            Error::Dimension(_) => Self::Dimension,
            Error::Degenerate(_) => Self::Degenerate,
            Error::Numerical(_) => Self::Numerical,
            Error::Precondition(_) => Self::Precondition,
            Error::Io(_) | Error::Csv(_) => Self::Io,
            Error::Json(_) => Self::Json,
        }
    }
}

/// An experiment configuration together with the environment it builds.
pub struct PlanIvExperiment {
    cfg: ExperimentConfig,
    inst: AppInstance,
}

/// An offline dataset, hidden columns included.
pub struct PlanIvDataset(OfflineDataset);

/// Fitted parameters and confidence sets for every stage.
pub struct PlanIvFits(FitSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PlanIvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PlanIvStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PlanIvStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PlanIvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlanIvStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside plan_iv".into());
            PlanIvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PlanIvStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn give_string(s: String, out: &mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(PlanIvStatus::Json, "output holds a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Row-major `k x m` instruments, `k x n` covariates and a length-`k` target.
unsafe fn design(
    x: *const f64,
    z: *const f64,
    y: *const f64,
    k: usize,
    m: usize,
    n: usize,
) -> Result<StageDesign, Failure> {
    let xs = slice(x, k * n, "x")?;
    let zs = slice(z, k * m, "z")?;
    let ys = slice(y, k, "y")?;
    let xm = DMatrix::from_row_slice(k, n, xs);
    let zm = DMatrix::from_row_slice(k, m, zs);
    Ok(StageDesign::new(
        xm,
        zm,
        DVector::from_column_slice(ys),
        0,
        TargetTag::Reward,
    )?)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn plan_iv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn plan_iv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds an experiment from its JSON configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_experiment_new(
    config_json: *const c_char,
    out: *mut *mut PlanIvExperiment,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(config_json, "config_json")?;
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(Error::from)?;
        cfg.validate()?;
        let inst = cfg.app.build()?;
        *out = Box::into_raw(Box::new(PlanIvExperiment { cfg, inst }));
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a live handle from [`plan_iv_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn plan_iv_experiment_free(exp: *mut PlanIvExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Collects `k` trajectories with the experiment's behavior policy.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_collect(
    exp: *const PlanIvExperiment,
    k: usize,
    seed: u64,
    out: *mut *mut PlanIvDataset,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let exp = handle(exp, "experiment")?;
        let ds = collect_dataset(&exp.inst.spec, &exp.inst.behavior, k, seed)?;
        *out = Box::into_raw(Box::new(PlanIvDataset(ds)));
        Ok(())
    })
}

/// Parses a dataset from NDJSON text.
///
/// # Safety
/// `ndjson` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_dataset_from_ndjson(
    ndjson: *const c_char,
    out: *mut *mut PlanIvDataset,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(ndjson, "ndjson")?;
        let ds = OfflineDataset::read_ndjson(text.as_bytes())?;
        *out = Box::into_raw(Box::new(PlanIvDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_dataset_len(ds: *const PlanIvDataset, out: *mut usize) -> PlanIvStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(ds, "dataset")?.0.k();
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable. The string is
/// released with [`plan_iv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn plan_iv_dataset_to_ndjson(ds: *const PlanIvDataset, out: *mut *mut c_char) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = handle(ds, "dataset")?.0.to_ndjson_string()?;
        give_string(text, out)
    })
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_dataset_free(ds: *mut PlanIvDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits every stage with the experiment's ridge and threshold settings.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_fit(
    exp: *const PlanIvExperiment,
    ds: *const PlanIvDataset,
    out: *mut *mut PlanIvFits,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let exp = handle(exp, "experiment")?;
        let ds = handle(ds, "dataset")?;
        let fits = fit_dataset(&exp.cfg, &exp.inst, &ds.0)?;
        *out = Box::into_raw(Box::new(PlanIvFits(fits)));
        Ok(())
    })
}

/// Number of fitted targets across all stages.
///
/// # Safety
/// `fits` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_fits_len(fits: *const PlanIvFits, out: *mut usize) -> PlanIvStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(fits, "fits")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `fits` must be a live handle; `out` must be writable. The string is
/// released with [`plan_iv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn plan_iv_fits_to_json(fits: *const PlanIvFits, out: *mut *mut c_char) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = serde_json::to_string(&handle(fits, "fits")?.0).map_err(Error::from)?;
        give_string(text, out)
    })
}

/// # Safety
/// `fits` must be null or a live fits handle.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_fits_free(fits: *mut PlanIvFits) {
    if !fits.is_null() {
        drop(Box::from_raw(fits));
    }
}

/// Plans pessimistically on `fits`; writes the plan as JSON.
///
/// # Safety
/// Handles must be live; `out` must be writable. The string is released
/// with [`plan_iv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn plan_iv_plan_json(
    exp: *const PlanIvExperiment,
    fits: *const PlanIvFits,
    out: *mut *mut c_char,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let exp = handle(exp, "experiment")?;
        let plan = plan_fits(&exp.cfg, &exp.inst, &handle(fits, "fits")?.0)?;
        give_string(serde_json::to_string(&plan).map_err(Error::from)?, out)
    })
}

/// Two-stage least squares with ridge `lambda`. `theta_out` receives `n` values.
///
/// # Safety
/// `x` holds `k*n`, `z` holds `k*m` and `y` holds `k` doubles, all
/// row-major; `theta_out` has room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_fit_2sls(
    x: *const f64,
    z: *const f64,
    y: *const f64,
    k: usize,
    m: usize,
    n: usize,
    lambda: f64,
    theta_out: *mut f64,
) -> PlanIvStatus {
    guard(|| {
        if theta_out.is_null() {
            return Err(null("theta_out"));
        }
        let d = design(x, z, y, k, m, n)?;
        let fit = fit_2sls(&d, lambda)?;
        std::slice::from_raw_parts_mut(theta_out, n).copy_from_slice(&fit.theta_hat);
        Ok(())
    })
}

/// Closed-form minimax loss of `theta` on a design.
///
/// # Safety
/// Same layout as [`plan_iv_fit_2sls`]; `theta` holds `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_minimax_loss(
    x: *const f64,
    z: *const f64,
    y: *const f64,
    k: usize,
    m: usize,
    n: usize,
    theta: *const f64,
    lambda: f64,
    out: *mut f64,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let d = design(x, z, y, k, m, n)?;
        *out = minimax_loss_linear(&d, slice(theta, n, "theta")?, lambda)?;
        Ok(())
    })
}

/// Confidence radius for a linear class. `transition` selects the
/// transition target instead of the reward.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plan_iv_threshold_linear(
    k: usize,
    m: usize,
    n: usize,
    horizon: usize,
    state_dim: usize,
    transition: bool,
    c0: f64,
    delta: f64,
    l_bound: f64,
    sigma: f64,
    out: *mut f64,
) -> PlanIvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = ThresholdConfig {
            c0,
            delta,
            l_bound,
            sigma,
            horizon,
            state_dim,
            k,
            m,
            n,
            target: if transition {
                TargetTag::Transition(0)
            } else {
                TargetTag::Reward
            },
        };
        *out = threshold_linear(&cfg)?;
        Ok(())
    })
}
