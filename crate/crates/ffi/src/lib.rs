//! C ABI for the fedlora simulator.
//!
//! Handles are opaque; every fallible call returns a [`FedloraStatus`] code
//! and the detailed message of the most recent failure on the calling
//! thread is available through [`fedlora_last_error_message`].
//!
//! ```c
//! FedloraConfig *cfg = NULL;
//! FedloraRun *run = NULL;
//! if (fedlora_config_parse(json, &cfg) == FEDLORA_STATUS_OK &&
//!     fedlora_run(cfg, &run) == FEDLORA_STATUS_OK) {
//!     FedloraRoundMetrics row;
//!     fedlora_run_record(run, fedlora_run_num_records(run) - 1, &row);
//!     printf("final loss %g\n", row.global_loss);
//! }
//! fedlora_run_free(run);
//! fedlora_config_free(cfg);
//! ```

use fedlora_core::config::parse_config;
use fedlora_core::orchestrator::{run_experiment, ExperimentConfig, RoundMetrics};
use fedlora_core::runner::metrics_csv;
use fedlora_core::AggregationStrategy;
use fedlora_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

/// Status codes returned by every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedloraStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The config document failed to parse.
    Parse = 3,
    /// The config parsed but failed validation.
    InvalidConfig = 4,
    /// Local training produced non-finite values.
    Divergence = 5,
    /// A numeric routine failed (non-finite input, SVD stall, ...).
    Numeric = 6,
    /// Filesystem failure.
    Io = 7,
    /// An index was out of range.
    OutOfRange = 8,
}

/// One metrics row, mirrored as plain C data.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedloraRoundMetrics {
    pub round: usize,
    pub global_loss: f64,
    pub global_grad_norm_sq: f64,
    pub trunc_bias_sq: f64,
    pub mean_trunc_err_sq: f64,
    pub weights_min: f64,
    pub weights_max: f64,
    pub wall_time_ms: f64,
}

/// Opaque experiment configuration handle.
pub struct FedloraConfig {
    inner: ExperimentConfig,
}

/// Opaque handle holding the metric series of one finished experiment.
pub struct FedloraRun {
    metrics: Vec<RoundMetrics>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> FedloraStatus {
    match err {
        Error::Parse(_) => FedloraStatus::Parse,
        Error::InvalidConfig { .. } | Error::UnsupportedMode(_) | Error::EmptyInput(_) => {
            FedloraStatus::InvalidConfig
        }
        Error::Divergence { .. } => FedloraStatus::Divergence,
        Error::Io(_) => FedloraStatus::Io,
        Error::RankOutOfRange { .. } => FedloraStatus::OutOfRange,
        Error::ShapeMismatch(_) | Error::SvdNoConvergence { .. } | Error::NonFinite(_) => {
            FedloraStatus::Numeric
        }
    }
}

fn fail(err: &Error) -> FedloraStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn fail_with(status: FedloraStatus, message: &str) -> FedloraStatus {
    set_last_error(message);
    status
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, FedloraStatus> {
    if ptr.is_null() {
        return Err(fail_with(
            FedloraStatus::NullArgument,
            &format!("{what} is null"),
        ));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail_with(
            FedloraStatus::InvalidUtf8,
            &format!("{what} is not valid UTF-8"),
        )
    })
}

/// Parse a JSON config document into a new handle.
///
/// On success writes the handle to `out` and returns `FEDLORA_STATUS_OK`;
/// the caller owns the handle and must release it with
/// [`fedlora_config_free`].
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedlora_config_parse(
    json: *const c_char,
    out: *mut *mut FedloraConfig,
) -> FedloraStatus {
    if out.is_null() {
        return fail_with(FedloraStatus::NullArgument, "out is null");
    }
    let text = match cstr_arg(json, "json") {
        Ok(t) => t,
        Err(code) => return code,
    };
    match parse_config(text) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(FedloraConfig { inner }));
            FedloraStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a config handle. Null is accepted and ignored.
///
/// # Safety
/// `cfg` must have come from [`fedlora_config_parse`] and not been freed.
#[no_mangle]
pub unsafe extern "C" fn fedlora_config_free(cfg: *mut FedloraConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Override the aggregation strategy (`"zero_padding"`,
/// `"truncated_baseline"`, `"joint"` or `"fedhl"`).
///
/// # Safety
/// `cfg` must be a live handle and `name` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedlora_config_set_strategy(
    cfg: *mut FedloraConfig,
    name: *const c_char,
) -> FedloraStatus {
    let Some(cfg) = cfg.as_mut() else {
        return fail_with(FedloraStatus::NullArgument, "cfg is null");
    };
    let name = match cstr_arg(name, "name") {
        Ok(n) => n,
        Err(code) => return code,
    };
    match AggregationStrategy::parse(name) {
        Ok(strategy) => {
            cfg.inner.strategy = strategy;
            match cfg.inner.validate() {
                Ok(()) => FedloraStatus::Ok,
                Err(e) => fail(&e),
            }
        }
        Err(e) => fail(&e),
    }
}

/// Re-seed the experiment (both the training streams and the problem).
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedlora_config_set_seed(cfg: *mut FedloraConfig, seed: u64) -> FedloraStatus {
    let Some(cfg) = cfg.as_mut() else {
        return fail_with(FedloraStatus::NullArgument, "cfg is null");
    };
    cfg.inner.master_seed = seed;
    cfg.inner.problem.master_seed = seed;
    FedloraStatus::Ok
}

/// Run the configured experiment to completion.
///
/// On success writes a run handle holding `rounds + 1` metric records
/// (record 0 evaluates the initial model).
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedlora_run(
    cfg: *const FedloraConfig,
    out: *mut *mut FedloraRun,
) -> FedloraStatus {
    if out.is_null() {
        return fail_with(FedloraStatus::NullArgument, "out is null");
    }
    let Some(cfg) = cfg.as_ref() else {
        return fail_with(FedloraStatus::NullArgument, "cfg is null");
    };
    match run_experiment(&cfg.inner) {
        Ok(metrics) => {
            *out = Box::into_raw(Box::new(FedloraRun { metrics }));
            FedloraStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a run handle. Null is accepted and ignored.
///
/// # Safety
/// `run` must have come from [`fedlora_run`] and not been freed.
#[no_mangle]
pub unsafe extern "C" fn fedlora_run_free(run: *mut FedloraRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of metric records in a finished run (`rounds + 1`).
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedlora_run_num_records(run: *const FedloraRun) -> usize {
    run.as_ref().map_or(0, |r| r.metrics.len())
}

/// Copy record `index` into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedlora_run_record(
    run: *const FedloraRun,
    index: usize,
    out: *mut FedloraRoundMetrics,
) -> FedloraStatus {
    let Some(run) = run.as_ref() else {
        return fail_with(FedloraStatus::NullArgument, "run is null");
    };
    if out.is_null() {
        return fail_with(FedloraStatus::NullArgument, "out is null");
    }
    let Some(m) = run.metrics.get(index) else {
        return fail_with(
            FedloraStatus::OutOfRange,
            &format!("record {index} out of range ({} records)", run.metrics.len()),
        );
    };
    *out = FedloraRoundMetrics {
        round: m.round_t,
        global_loss: m.global_loss,
        global_grad_norm_sq: m.global_grad_norm_sq,
        trunc_bias_sq: m.trunc_bias_sq,
        mean_trunc_err_sq: m.mean_trunc_err_sq,
        weights_min: m.weights_min,
        weights_max: m.weights_max,
        wall_time_ms: m.wall_time_ms,
    };
    FedloraStatus::Ok
}

/// Write the run's metrics CSV (same schema and formatting as the CLI).
///
/// # Safety
/// `run` must be a live handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedlora_run_write_csv(
    run: *const FedloraRun,
    path: *const c_char,
) -> FedloraStatus {
    let Some(run) = run.as_ref() else {
        return fail_with(FedloraStatus::NullArgument, "run is null");
    };
    let path = match cstr_arg(path, "path") {
        Ok(p) => p,
        Err(code) => return code,
    };
    match std::fs::write(path, metrics_csv(&run.metrics)) {
        Ok(()) => FedloraStatus::Ok,
        Err(e) => fail(&Error::Io(e)),
    }
}

/// Copy the most recent error message on this thread into `buf` (truncated
/// to `cap − 1` bytes, always NUL-terminated when `cap > 0`). Returns the
/// full message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn fedlora_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
