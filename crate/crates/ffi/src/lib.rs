//! C ABI over the barriergrasp toolkit.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`BgStatus`]
//! and records a message retrievable with [`bg_last_error`] on the same
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use barriergrasp::barrier::{velocity_envelope, PositionConstraint};
use barriergrasp::cli::{load_scenario, EnvelopeKind};
use barriergrasp::error::Error;
use barriergrasp::sim::{self, RunResult, Scenario};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidScenario = 4,
    Io = 5,
    Parse = 6,
    Numerical = 7,
    Panic = 8,
}

/// Class-K shapes available to [`bg_velocity_envelope`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgEnvelopeKind {
    /// `h`
    Linear = 0,
    /// `0.15 h^3`
    Cubic = 1,
    /// `2 atan(h)`
    Arctan = 2,
}

/// Opaque scenario handle.
pub struct BgScenario {
    inner: Scenario,
}

/// Opaque handle to a finished run: trace plus summary.
pub struct BgRun {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> BgStatus {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Override { .. } => BgStatus::InvalidArgument,
        Error::InvalidScenario(_) | Error::InvalidModel(_) => BgStatus::InvalidScenario,
        Error::Io { .. } => BgStatus::Io,
        Error::Json { .. } | Error::Csv(_) => BgStatus::Parse,
        _ => BgStatus::Numerical,
    }
}

struct Failure(BgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            BgStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(BgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BgStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(BgStatus::NullPointer, format!("{what} is null")))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(BgStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(BgStatus::Panic, "string contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn bg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a scenario from a JSON file path or a built-in name.
///
/// # Safety
/// `source` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_scenario_load(source: *const c_char, out: *mut *mut BgScenario) -> BgStatus {
    guard(|| {
        check_out(out, "out")?;
        let source = read_str(source, "source")?;
        let inner = load_scenario(source, &[] as &[String])?;
        *out = Box::into_raw(Box::new(BgScenario { inner }));
        Ok(())
    })
}

/// Parses a scenario from JSON text. Relative model paths resolve against
/// the working directory.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_scenario_from_json(json: *const c_char, out: *mut *mut BgScenario) -> BgStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = read_str(json, "json")?;
        let inner = Scenario::from_json(text, "<ffi>")?;
        *out = Box::into_raw(Box::new(BgScenario { inner }));
        Ok(())
    })
}

/// Applies one `key=value` override in place. On failure the scenario is
/// left unchanged.
///
/// # Safety
/// `scenario` must come from this library; `assignment` must be a
/// nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bg_scenario_override(scenario: *mut BgScenario, assignment: *const c_char) -> BgStatus {
    guard(|| {
        let s = scenario
            .as_mut()
            .ok_or_else(|| Failure(BgStatus::NullPointer, "scenario is null".into()))?;
        let assignment = read_str(assignment, "assignment")?;
        s.inner = s.inner.with_overrides(&[assignment])?;
        Ok(())
    })
}

/// Serializes the scenario back to JSON. Free the result with
/// [`bg_string_free`].
///
/// # Safety
/// `scenario` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_scenario_to_json(scenario: *const BgScenario, out: *mut *mut c_char) -> BgStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = deref(scenario, "scenario")?;
        let text = serde_json::to_string_pretty(&s.inner).map_err(|e| Failure(BgStatus::Parse, e.to_string()))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library or be null, and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bg_scenario_free(scenario: *mut BgScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulates the scenario. A lost grasp is a normal outcome reported in the
/// summary, not an error.
///
/// # Safety
/// `scenario` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_run(scenario: *const BgScenario, out: *mut *mut BgRun) -> BgStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = deref(scenario, "scenario")?;
        let inner = sim::run(&s.inner)?;
        *out = Box::into_raw(Box::new(BgRun { inner }));
        Ok(())
    })
}

/// Number of recorded samples.
///
/// # Safety
/// `run` must come from this library or be null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn bg_run_sample_count(run: *const BgRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.trace.len())
}

/// Whether any monitored barrier went negative.
///
/// # Safety
/// `run` must come from this library or be null (yields false).
#[no_mangle]
pub unsafe extern "C" fn bg_run_any_violation(run: *const BgRun) -> bool {
    run.as_ref().is_some_and(|r| r.inner.summary.any_violation)
}

/// Minimum margin-shifted barrier over the run, NaN if nothing was
/// recorded.
///
/// # Safety
/// `run` must come from this library or be null (yields NaN).
#[no_mangle]
pub unsafe extern "C" fn bg_run_min_h_robust(run: *const BgRun) -> f64 {
    run.as_ref().and_then(|r| r.inner.summary.min_h_robust).unwrap_or(f64::NAN)
}

/// Run summary as JSON. Free the result with [`bg_string_free`].
///
/// # Safety
/// `run` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_run_summary_json(run: *const BgRun, out: *mut *mut c_char) -> BgStatus {
    guard(|| {
        check_out(out, "out")?;
        let r = deref(run, "run")?;
        *out = to_c_string(r.inner.summary.to_json()?)?;
        Ok(())
    })
}

/// Writes the trace as CSV to `path`.
///
/// # Safety
/// `run` must come from this library; `path` must be a nul-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn bg_run_write_csv(run: *const BgRun, path: *const c_char) -> BgStatus {
    guard(|| {
        let r = deref(run, "run")?;
        let path = read_str(path, "path")?;
        r.inner.trace.save_csv(Path::new(path))?;
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library or be null, and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bg_run_free(run: *mut BgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn bg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Velocity interval at position `q` keeping both barriers of
/// `lower <= q <= upper` nonnegative.
///
/// # Safety
/// `v_lo` and `v_hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_velocity_envelope(
    kind: BgEnvelopeKind,
    lower: f64,
    upper: f64,
    q: f64,
    v_lo: *mut f64,
    v_hi: *mut f64,
) -> BgStatus {
    guard(|| {
        check_out(v_lo, "v_lo")?;
        check_out(v_hi, "v_hi")?;
        if !(lower < upper) {
            return Err(Failure(BgStatus::InvalidArgument, "need lower < upper".into()));
        }
        let kind = match kind {
            BgEnvelopeKind::Linear => EnvelopeKind::Linear,
            BgEnvelopeKind::Cubic => EnvelopeKind::Cubic,
            BgEnvelopeKind::Arctan => EnvelopeKind::Arctan,
        };
        let c_min = PositionConstraint::lower_bound(1, 0, lower, 0.0, 0.0)?;
        let c_max = PositionConstraint::upper_bound(1, 0, upper, 0.0, 0.0)?;
        let p = velocity_envelope(&c_min, &c_max, &kind.class_k(), &[q])?[0];
        *v_lo = p.v_lo;
        *v_hi = p.v_hi;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        let status = unsafe { bg_scenario_load(ptr::null(), &mut out) };
        assert_eq!(status, BgStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(bg_last_error()) }.to_str().unwrap();
        assert!(msg.contains("source"));
        assert!(out.is_null());
    }

    #[test]
    fn success_clears_last_error() {
        let (mut lo, mut hi) = (0.0, 0.0);
        let bad = unsafe { bg_velocity_envelope(BgEnvelopeKind::Linear, 4.0, 1.0, 2.0, &mut lo, &mut hi) };
        assert_eq!(bad, BgStatus::InvalidArgument);
        assert!(!bg_last_error().is_null());
        let ok = unsafe { bg_velocity_envelope(BgEnvelopeKind::Linear, 1.0, 4.0, 2.5, &mut lo, &mut hi) };
        assert_eq!(ok, BgStatus::Ok);
        assert!(bg_last_error().is_null());
        assert_eq!((lo, hi), (-1.5, 1.5));
    }

    #[test]
    fn version_matches_package() {
        let v = unsafe { CStr::from_ptr(bg_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
