//! C ABI for the constrained top-K bandit library.
//!
//! Handles are opaque; every fallible call returns a `TkbStatus` and leaves a
//! human-readable message retrievable through `tkb_last_error` on the same
//! thread. Pointers returned through out-parameters are owned by the caller
//! and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use topk_bandit::config::{parse_config, set_key, ParsedConfig};
use topk_bandit::error::Error;
use topk_bandit::harness::{export_csv, run_experiment, MetricsSeries};
use topk_bandit::types::{build_constraints, ned, FeatureMatrix, SamplerId};

/// Result codes mirrored from the library's error type.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TkbStatus {
    Ok = 0,
    NullPointer = 1,
    Utf8 = 2,
    InvalidInput = 3,
    DegenerateInput = 4,
    Parse = 5,
    Infeasible = 6,
    EndOfLog = 7,
    Config = 8,
    Io = 9,
    OutOfRange = 10,
    Internal = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> TkbStatus {
    match err {
        Error::InvalidInput(_) => TkbStatus::InvalidInput,
        Error::DegenerateInput(_) => TkbStatus::DegenerateInput,
        Error::Parse { .. } => TkbStatus::Parse,
        Error::Infeasible(_) => TkbStatus::Infeasible,
        Error::EndOfLog(_) => TkbStatus::EndOfLog,
        Error::Config(_) => TkbStatus::Config,
        Error::UndefinedWindow(_) => TkbStatus::InvalidInput,
        Error::Io { .. } => TkbStatus::Io,
        Error::Internal(_) => TkbStatus::Internal,
    }
}

fn fail(err: Error) -> TkbStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Opaque experiment configuration.
pub struct TkbConfig {
    inner: ParsedConfig,
}

/// Opaque per-replicate metric series.
pub struct TkbSeries {
    inner: MetricsSeries,
}

/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
unsafe fn read_str<'a>(text: *const c_char) -> Result<&'a str, TkbStatus> {
    if text.is_null() {
        set_error("null string argument");
        return Err(TkbStatus::NullPointer);
    }
    CStr::from_ptr(text).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        TkbStatus::Utf8
    })
}

/// Last error message for this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn tkb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// A configuration with library defaults.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tkb_config_default(out: *mut *mut TkbConfig) -> TkbStatus {
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    let parsed = match parse_config("") {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    *out = Box::into_raw(Box::new(TkbConfig { inner: parsed }));
    TkbStatus::Ok
}

/// Parse the flat `key = value` configuration text.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tkb_config_parse(
    text: *const c_char,
    out: *mut *mut TkbConfig,
) -> TkbStatus {
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    let text = match read_str(text) {
        Ok(t) => t,
        Err(s) => return s,
    };
    match parse_config(text) {
        Ok(parsed) => {
            *out = Box::into_raw(Box::new(TkbConfig { inner: parsed }));
            TkbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Apply one `key = value` assignment.
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tkb_config_set(
    config: *mut TkbConfig,
    key: *const c_char,
    value: *const c_char,
) -> TkbStatus {
    let Some(config) = config.as_mut() else {
        set_error("null config");
        return TkbStatus::NullPointer;
    };
    let key = match read_str(key) {
        Ok(k) => k,
        Err(s) => return s,
    };
    let value = match read_str(value) {
        Ok(v) => v,
        Err(s) => return s,
    };
    match set_key(&mut config.inner, key, value) {
        Ok(()) => TkbStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Validate without running.
///
/// # Safety
/// `config` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tkb_config_validate(config: *const TkbConfig) -> TkbStatus {
    let Some(config) = config.as_ref() else {
        set_error("null config");
        return TkbStatus::NullPointer;
    };
    match config.inner.experiment.validate() {
        Ok(()) => TkbStatus::Ok,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `config` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tkb_config_free(config: *mut TkbConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run one replicate under the given seed.
///
/// # Safety
/// `config` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tkb_run(
    config: *const TkbConfig,
    seed: u64,
    replicate: u64,
    out: *mut *mut TkbSeries,
) -> TkbStatus {
    let Some(config) = config.as_ref() else {
        set_error("null config");
        return TkbStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    match run_experiment(&config.inner.experiment, seed, replicate) {
        Ok(series) => {
            *out = Box::into_raw(Box::new(TkbSeries { inner: series }));
            TkbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of recorded rounds.
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_len(series: *const TkbSeries) -> usize {
    series.as_ref().map(|s| s.inner.len()).unwrap_or(0)
}

unsafe fn series_field(
    series: *const TkbSeries,
    index: usize,
    out: *mut f64,
    field: impl Fn(&topk_bandit::master::RoundRecord) -> f64,
) -> TkbStatus {
    let Some(series) = series.as_ref() else {
        set_error("null series");
        return TkbStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    match series.inner.records.get(index) {
        Some(r) => {
            *out = field(r);
            TkbStatus::Ok
        }
        None => {
            set_error("round index out of range");
            TkbStatus::OutOfRange
        }
    }
}

/// Reward at a 0-based round index.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_reward(
    series: *const TkbSeries,
    index: usize,
    out: *mut f64,
) -> TkbStatus {
    series_field(series, index, out, |r| r.reward)
}

/// Violation rate at a 0-based round index.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_violation(
    series: *const TkbSeries,
    index: usize,
    out: *mut f64,
) -> TkbStatus {
    series_field(series, index, out, |r| r.violation)
}

/// Composite score of the chosen sample at a 0-based round index.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_score(
    series: *const TkbSeries,
    index: usize,
    out: *mut f64,
) -> TkbStatus {
    series_field(series, index, out, |r| r.score)
}

/// Chosen sampler at a 0-based round index: 0 solver, 1 wolpertinger,
/// 2 g2anet, 3 cem, 4 random, 5 tlbo.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_sampler(
    series: *const TkbSeries,
    index: usize,
    out: *mut i32,
) -> TkbStatus {
    let Some(series) = series.as_ref() else {
        set_error("null series");
        return TkbStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    match series.inner.records.get(index) {
        Some(r) => {
            *out = r.sampler.index() as i32;
            TkbStatus::Ok
        }
        None => {
            set_error("round index out of range");
            TkbStatus::OutOfRange
        }
    }
}

/// Mean reward over the whole series.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_mean_reward(
    series: *const TkbSeries,
    out: *mut f64,
) -> TkbStatus {
    let Some(series) = series.as_ref() else {
        set_error("null series");
        return TkbStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    *out = series.inner.mean_reward();
    TkbStatus::Ok
}

/// Mean violation rate over the whole series.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_mean_violation(
    series: *const TkbSeries,
    out: *mut f64,
) -> TkbStatus {
    let Some(series) = series.as_ref() else {
        set_error("null series");
        return TkbStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return TkbStatus::NullPointer;
    }
    *out = series.inner.mean_violation();
    TkbStatus::Ok
}

/// Write the round-by-round CSV (`t,reward,violation_rate,chosen_sampler,score`).
///
/// # Safety
/// `path` must be NUL-terminated; `series` a live handle.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_export_csv(
    series: *const TkbSeries,
    path: *const c_char,
) -> TkbStatus {
    let Some(series) = series.as_ref() else {
        set_error("null series");
        return TkbStatus::NullPointer;
    };
    let path = match read_str(path) {
        Ok(p) => PathBuf::from(p),
        Err(s) => return s,
    };
    match export_csv(&series.inner, &path) {
        Ok(()) => TkbStatus::Ok,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `series` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tkb_series_free(series: *mut TkbSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Normalized edit distance between two nonnegative vectors of length `len`.
///
/// # Safety
/// `u` and `v` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_ned(
    u: *const f64,
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> TkbStatus {
    if u.is_null() || v.is_null() || out.is_null() {
        set_error("null pointer argument");
        return TkbStatus::NullPointer;
    }
    let us = std::slice::from_raw_parts(u, len);
    let vs = std::slice::from_raw_parts(v, len);
    match ned(us, vs) {
        Ok(d) => {
            *out = d;
            TkbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Count of diversity constraints induced by thresholding pairwise NED on a
/// row-major `l x d` feature matrix.
///
/// # Safety
/// `features` must point to `l * d` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tkb_constraint_count(
    features: *const f64,
    l: usize,
    d: usize,
    tau: f64,
    out: *mut usize,
) -> TkbStatus {
    if features.is_null() || out.is_null() {
        set_error("null pointer argument");
        return TkbStatus::NullPointer;
    }
    let flat = std::slice::from_raw_parts(features, l * d);
    let rows: Vec<Vec<f64>> = flat.chunks(d).map(|c| c.to_vec()).collect();
    let matrix = match FeatureMatrix::new(rows) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match build_constraints(&matrix, tau) {
        Ok(c) => {
            *out = c.m();
            TkbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Printable name of a sampler index, or NULL when out of range.
#[no_mangle]
pub extern "C" fn tkb_sampler_name(index: i32) -> *const c_char {
    const NAMES: [&str; 6] = [
        "solver\0",
        "wolpertinger\0",
        "g2anet\0",
        "cem\0",
        "random\0",
        "tlbo\0",
    ];
    if !(0..6).contains(&index) {
        return ptr::null();
    }
    let _ = SamplerId::ALL[index as usize];
    NAMES[index as usize].as_ptr() as *const c_char
}
