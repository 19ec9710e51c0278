//! C ABI for the desom library. Handles are opaque pointers; every
//! fallible call returns a status code and stores a message retrievable
//! with [`desom_last_error_message`]. Strings returned by this library are
//! heap-allocated and must be released with [`desom_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use desom::harness::export::{export_csv, export_metadata};
use desom::harness::runner::{run_experiment_on_instance, ExperimentResult};
use desom::harness::ExperimentConfig;
use desom::objective::DynamicLeastSquares;
use desom::DesomError;

/// Status codes returned by every fallible call.
pub const DESOM_OK: c_int = 0;
pub const DESOM_ERR_NULL_POINTER: c_int = 1;
pub const DESOM_ERR_INVALID_UTF8: c_int = 2;
pub const DESOM_ERR_CONFIG: c_int = 3;
pub const DESOM_ERR_RUN: c_int = 4;
pub const DESOM_ERR_NOT_RUN: c_int = 5;
pub const DESOM_ERR_OUT_OF_RANGE: c_int = 6;
pub const DESOM_ERR_PANIC: c_int = 7;

/// Metric selectors for [`desom_experiment_copy_series`].
pub const DESOM_METRIC_TRACKING_ERROR: c_int = 0;
pub const DESOM_METRIC_LYAPUNOV: c_int = 1;
pub const DESOM_METRIC_PRIMAL_ERROR: c_int = 2;
pub const DESOM_METRIC_DRIFT: c_int = 3;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn set_desom_error(e: &DesomError) {
    set_error(e.to_string());
}

/// An experiment handle: a parsed configuration, the generated problem
/// instance, and (after a successful run) the recorded trajectories.
pub struct DesomExperiment {
    config: ExperimentConfig,
    instance: DynamicLeastSquares,
    result: Option<ExperimentResult>,
}

fn build_instance(config: &ExperimentConfig) -> Result<DynamicLeastSquares, DesomError> {
    let pc = &config.problem;
    DynamicLeastSquares::make_with_noise(
        pc.n,
        pc.p,
        pc.horizon + 1,
        pc.change_period,
        pc.trajectory_scale,
        config.seeds.problem,
        pc.noise_std,
    )
}

fn new_experiment(config: ExperimentConfig) -> *mut DesomExperiment {
    match build_instance(&config) {
        Ok(instance) => {
            Box::into_raw(Box::new(DesomExperiment { config, instance, result: None }))
        }
        Err(e) => {
            set_desom_error(&e);
            std::ptr::null_mut()
        }
    }
}

/// Creates an experiment from a TOML configuration string. Returns NULL on
/// error; see [`desom_last_error_message`].
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string or NULL (NULL selects
/// the default configuration).
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_new(
    config_toml: *const c_char,
) -> *mut DesomExperiment {
    let config = if config_toml.is_null() {
        ExperimentConfig::default()
    } else {
        let text = match CStr::from_ptr(config_toml).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("config string is not valid UTF-8");
                return std::ptr::null_mut();
            }
        };
        match ExperimentConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => {
                set_desom_error(&e);
                return std::ptr::null_mut();
            }
        }
    };
    new_experiment(config)
}

/// Releases an experiment handle. NULL is ignored.
///
/// # Safety
/// `handle` must be a pointer returned by [`desom_experiment_new`] that has
/// not been freed already.
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_free(handle: *mut DesomExperiment) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Runs all configured solvers over the horizon. Idempotent: a second call
/// re-runs and replaces the stored result.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_run(handle: *mut DesomExperiment) -> c_int {
    let Some(exp) = handle.as_mut() else {
        set_error("handle is NULL");
        return DESOM_ERR_NULL_POINTER;
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        run_experiment_on_instance(&exp.config, &exp.instance)
    }));
    match outcome {
        Ok(Ok(result)) => {
            exp.result = Some(result);
            DESOM_OK
        }
        Ok(Err(e)) => {
            set_desom_error(&e);
            DESOM_ERR_RUN
        }
        Err(_) => {
            set_error("internal panic during run");
            DESOM_ERR_PANIC
        }
    }
}

fn with_result<T>(
    handle: *const DesomExperiment,
    f: impl FnOnce(&ExperimentResult) -> Result<T, c_int>,
) -> Result<T, c_int> {
    let exp = unsafe { handle.as_ref() }.ok_or_else(|| {
        set_error("handle is NULL");
        DESOM_ERR_NULL_POINTER
    })?;
    let result = exp.result.as_ref().ok_or_else(|| {
        set_error("experiment has not been run");
        DESOM_ERR_NOT_RUN
    })?;
    f(result)
}

/// Number of solver trajectories, or a negative status code.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_solver_count(
    handle: *const DesomExperiment,
) -> c_int {
    match with_result(handle, |r| Ok(r.trajectories.len() as c_int)) {
        Ok(n) => n,
        Err(code) => -code,
    }
}

/// Label of solver `idx`, as a heap string, or NULL on error.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_solver_label(
    handle: *const DesomExperiment,
    idx: c_int,
) -> *mut c_char {
    let label = with_result(handle, |r| {
        r.trajectories
            .get(idx as usize)
            .map(|t| t.label.clone())
            .ok_or_else(|| {
                set_error(format!("solver index {idx} out of range"));
                DESOM_ERR_OUT_OF_RANGE
            })
    });
    match label {
        Ok(l) => CString::new(l).map(CString::into_raw).unwrap_or(std::ptr::null_mut()),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Number of recorded steps for solver `idx`, or a negative status code.
/// A diverged solver has fewer recorded steps than the horizon.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_row_count(
    handle: *const DesomExperiment,
    idx: c_int,
) -> c_int {
    let count = with_result(handle, |r| {
        r.trajectories.get(idx as usize).map(|t| t.rows.len() as c_int).ok_or_else(|| {
            set_error(format!("solver index {idx} out of range"));
            DESOM_ERR_OUT_OF_RANGE
        })
    });
    match count {
        Ok(n) => n,
        Err(code) => -code,
    }
}

/// Copies one metric series of solver `idx` into `buf` (capacity `len`
/// doubles). Returns the number of values written, or a negative status
/// code. `metric` is one of the `DESOM_METRIC_*` selectors.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`] and `buf`
/// must point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_copy_series(
    handle: *const DesomExperiment,
    idx: c_int,
    metric: c_int,
    buf: *mut f64,
    len: usize,
) -> c_int {
    if buf.is_null() {
        set_error("buffer is NULL");
        return -DESOM_ERR_NULL_POINTER;
    }
    let values = with_result(handle, |r| {
        let traj = r.trajectories.get(idx as usize).ok_or_else(|| {
            set_error(format!("solver index {idx} out of range"));
            DESOM_ERR_OUT_OF_RANGE
        })?;
        let pick = |row: &desom::harness::TrajectoryRow| match metric {
            DESOM_METRIC_TRACKING_ERROR => Ok(row.e_t),
            DESOM_METRIC_LYAPUNOV => Ok(row.lyapunov),
            DESOM_METRIC_PRIMAL_ERROR => Ok(row.primal_err),
            DESOM_METRIC_DRIFT => Ok(row.drift),
            _ => Err(()),
        };
        traj.rows
            .iter()
            .map(|row| {
                pick(row).map_err(|_| {
                    set_error(format!("unknown metric selector {metric}"));
                    DESOM_ERR_OUT_OF_RANGE
                })
            })
            .collect::<Result<Vec<f64>, c_int>>()
    });
    match values {
        Ok(v) => {
            let n = v.len().min(len);
            std::ptr::copy_nonoverlapping(v.as_ptr(), buf, n);
            n as c_int
        }
        Err(code) => -code,
    }
}

/// Full metrics table as a CSV heap string, or NULL on error.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_metrics_csv(
    handle: *const DesomExperiment,
) -> *mut c_char {
    match with_result(handle, |r| Ok(export_csv(r))) {
        Ok(csv) => CString::new(csv).map(CString::into_raw).unwrap_or(std::ptr::null_mut()),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Run metadata (resolved config, tuned hyperparameters, network constants)
/// as a JSON heap string, or NULL on error.
///
/// # Safety
/// `handle` must be a live pointer from [`desom_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn desom_experiment_metadata_json(
    handle: *const DesomExperiment,
) -> *mut c_char {
    let json = with_result(handle, |r| {
        export_metadata(r).map_err(|e| {
            set_desom_error(&e);
            DESOM_ERR_RUN
        })
    });
    match json {
        Ok(j) => CString::new(j).map(CString::into_raw).unwrap_or(std::ptr::null_mut()),
        Err(_) => std::ptr::null_mut(),
    }
}

/// The message of the last error on this thread, as a heap string, or NULL
/// if no error has occurred.
#[no_mangle]
pub extern "C" fn desom_last_error_message() -> *mut c_char {
    LAST_ERROR
        .with(|e| e.borrow().clone())
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be a pointer returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn desom_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
