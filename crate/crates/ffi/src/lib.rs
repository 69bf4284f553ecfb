//! C ABI over the recaudit pipeline.
//!
//! Every fallible function returns an [`RaStatus`]. On failure the message is
//! kept per thread and can be read with [`ra_last_error_message`]. Strings
//! handed out by the library are owned by the caller and released with
//! [`ra_string_free`]; handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use recaudit::pipeline::{evaluate_log_bytes, execute_run, RunArtifacts, RunConfigFile};
use recaudit::riskeval::{gini, js_divergence, ReportOptions};
use recaudit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaStatus {
    RaOk = 0,
    /// A required pointer argument was null.
    RaErrNull = 1,
    /// A string argument was not valid UTF-8.
    RaErrUtf8 = 2,
    /// The input was rejected: malformed, out of range or unknown reference.
    RaErrInvalid = 3,
    RaErrIo = 4,
    RaErrRuntime = 5,
    /// The library panicked. The handle arguments should not be reused.
    RaErrPanic = 6,
}

/// Result of a completed simulation run: the exposure log and its report.
pub struct RaRun {
    artifacts: RunArtifacts,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(RaStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => RaStatus::RaErrIo,
            e if e.is_invalid_input() => RaStatus::RaErrInvalid,
            _ => RaStatus::RaErrRuntime,
        };
        set_error(e.to_string());
        Fail(status)
    }
}

fn fail(status: RaStatus, message: &str) -> Fail {
    set_error(message);
    Fail(status)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RaStatus::RaOk,
        Ok(Err(Fail(status))) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RaStatus::RaErrPanic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(RaStatus::RaErrNull, &format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RaStatus::RaErrUtf8, &format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(RaStatus::RaErrNull, &format!("`{name}` is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RaStatus::RaErrNull, &format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn owned_string(s: impl Into<Vec<u8>>) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(RaStatus::RaErrRuntime, "output contains a nul byte"))
}

/// Message of the last failed call on this thread, or null if the last call
/// succeeded. Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ra_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ra_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ra_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a run configuration (json text; relative paths resolve against
/// `base_dir`), runs the simulation and evaluates it. On success `*out` owns
/// the new run handle.
///
/// # Safety
/// `config_json` and `base_dir` must be nul-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ra_run_execute(
    config_json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut RaRun,
) -> RaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(config_json, "config_json")?;
        let base = str_arg(base_dir, "base_dir")?;
        let config = RunConfigFile::from_json(text, Path::new(base))?;
        let artifacts = execute_run(&config)?;
        *out = Box::into_raw(Box::new(RaRun { artifacts }));
        Ok(())
    })
}

/// Copies the run's exposure log (json lines) into a new string.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_run_log(run: *const RaRun, out: *mut *mut c_char) -> RaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let run = run.as_ref().ok_or_else(|| fail(RaStatus::RaErrNull, "`run` is null"))?;
        *out = owned_string(run.artifacts.log.clone())?;
        Ok(())
    })
}

/// Copies the run's risk report (json) into a new string.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_run_report(run: *const RaRun, out: *mut *mut c_char) -> RaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let run = run.as_ref().ok_or_else(|| fail(RaStatus::RaErrNull, "`run` is null"))?;
        *out = owned_string(run.artifacts.report.clone())?;
        Ok(())
    })
}

/// Releases a run handle. Null is ignored.
///
/// # Safety
/// `run` must come from [`ra_run_execute`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ra_run_free(run: *mut RaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Evaluates an exposure log (json lines) into a risk report. `options_json`
/// may be null for defaults.
///
/// # Safety
/// String arguments must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_evaluate_log(
    log_jsonl: *const c_char,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> RaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let log = str_arg(log_jsonl, "log_jsonl")?;
        let options = if options_json.is_null() {
            ReportOptions::default()
        } else {
            serde_json::from_str(str_arg(options_json, "options_json")?)
                .map_err(|e| fail(RaStatus::RaErrInvalid, &format!("invalid `options_json`: {e}")))?
        };
        let report = evaluate_log_bytes(log.as_bytes(), &options)?;
        *out = owned_string(report.to_json())?;
        Ok(())
    })
}

/// Gini coefficient of `len` non-negative values.
///
/// # Safety
/// `values` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_gini(values: *const f64, len: usize, out: *mut f64) -> RaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = f64::NAN;
        *out = gini(slice_arg(values, len, "values")?)?;
        Ok(())
    })
}

/// Jensen-Shannon divergence (base 2) of two distributions of length `len`.
///
/// # Safety
/// `p` and `q` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_js_divergence(
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
) -> RaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = f64::NAN;
        *out = js_divergence(slice_arg(p, len, "p")?, slice_arg(q, len, "q")?)?;
        Ok(())
    })
}
