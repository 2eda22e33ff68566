//! C interface to `gomea-sr`.
//!
//! Objects are opaque handles created and released through this API. Every
//! fallible call returns a [`GsrStatus`]; the message of the most recent
//! failure on the calling thread is available from
//! [`gsr_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gomea_sr::dataio::{load_csv, synth_problem, ColumnRef, CsvOptions, DataError, Dataset};
use gomea_sr::experiments::{run_experiment, run_on_dataset, ExperimentError, RunRecord, Settings};
use gomea_sr::linkage::measure_node_proximity;
use gomea_sr::template::Template;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Config = 5,
    Engine = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A loaded or generated dataset.
pub struct GsrDataset {
    inner: Dataset,
}

/// Accumulated key/value run settings.
pub struct GsrConfig {
    settings: Settings,
}

/// The record of a finished run.
pub struct GsrRunRecord {
    inner: RunRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: GsrStatus, msg: impl Into<String>) -> GsrStatus {
    set_error(msg);
    status
}

fn status_of(e: &ExperimentError) -> GsrStatus {
    match e {
        ExperimentError::Config(_) | ExperimentError::RunOutOfRange { .. } => GsrStatus::Config,
        ExperimentError::Data(DataError::Io { .. }) | ExperimentError::Io { .. } => GsrStatus::Io,
        ExperimentError::Data(_) => GsrStatus::Data,
        _ => GsrStatus::Engine,
    }
}

fn guard(f: impl FnOnce() -> GsrStatus) -> GsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(GsrStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, GsrStatus> {
    if s.is_null() {
        return Err(fail(GsrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(GsrStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn copy_out(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> GsrStatus {
    let bytes = text.as_bytes();
    if !needed.is_null() {
        // SAFETY: caller passes a writable size_t or null.
        unsafe { *needed = bytes.len() + 1 };
    }
    if buf.is_null() || len < bytes.len() + 1 {
        return fail(
            GsrStatus::BufferTooSmall,
            format!("buffer of {len} bytes cannot hold {} bytes", bytes.len() + 1),
        );
    }
    // SAFETY: `buf` holds at least `bytes.len() + 1` bytes.
    unsafe {
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
    }
    GsrStatus::Ok
}

/// Copies the last error message of this thread into `buf` and returns the
/// buffer size it needs (including the terminator); 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gsr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Loads a CSV file with a header row. `target` is a column name or a
/// zero-based index.
///
/// # Safety
/// `path` and `target` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gsr_dataset_load_csv(
    path: *const c_char,
    target: *const c_char,
    out: *mut *mut GsrDataset,
) -> GsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsrStatus::NullPointer, "out is null");
        }
        let (path, target) = match (read_str(path, "path"), read_str(target, "target")) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let opts = CsvOptions::target(target.parse::<ColumnRef>().expect("infallible"));
        match load_csv(PathBuf::from(path), &opts) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(GsrDataset { inner: d }));
                GsrStatus::Ok
            }
            Err(e) => {
                let status = if matches!(e, DataError::Io { .. }) {
                    GsrStatus::Io
                } else {
                    GsrStatus::Data
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// Generates a named synthetic problem.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsr_dataset_synthetic(
    name: *const c_char,
    rows: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut GsrDataset,
) -> GsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsrStatus::NullPointer, "out is null");
        }
        let name = match read_str(name, "name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        match synth_problem(name, rows, noise, seed) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(GsrDataset { inner: d }));
                GsrStatus::Ok
            }
            Err(e @ DataError::UnknownProblem(_)) => fail(GsrStatus::InvalidArgument, e.to_string()),
            Err(e) => fail(GsrStatus::Data, e.to_string()),
        }
    })
}

/// # Safety
/// `d` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsr_dataset_free(d: *mut GsrDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Number of rows, 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gsr_dataset_rows(d: *const GsrDataset) -> usize {
    d.as_ref().map_or(0, |d| d.inner.rows())
}

/// Number of features, 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gsr_dataset_features(d: *const GsrDataset) -> usize {
    d.as_ref().map_or(0, |d| d.inner.features())
}

/// Creates an empty configuration (all defaults).
#[no_mangle]
pub extern "C" fn gsr_config_new() -> *mut GsrConfig {
    Box::into_raw(Box::new(GsrConfig {
        settings: Settings::default(),
    }))
}

/// Sets one key, using the same keys as configuration files.
///
/// # Safety
/// `c` must be a live config handle; `key` and `value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gsr_config_set(c: *mut GsrConfig, key: *const c_char, value: *const c_char) -> GsrStatus {
    guard(|| {
        let Some(c) = c.as_mut() else {
            return fail(GsrStatus::NullPointer, "config is null");
        };
        let (key, value) = match (read_str(key, "key"), read_str(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match c.settings.set(key, value) {
            Ok(()) => GsrStatus::Ok,
            Err(e) => fail(GsrStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `c` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsr_config_free(c: *mut GsrConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs the configuration. With a non-null `data` the run uses it instead
/// of the configured data source.
///
/// # Safety
/// `c` must be a live config, `data` null or a live dataset, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gsr_run(c: *const GsrConfig, data: *const GsrDataset, out: *mut *mut GsrRunRecord) -> GsrStatus {
    guard(|| {
        if out.is_null() {
            return fail(GsrStatus::NullPointer, "out is null");
        }
        let Some(c) = c.as_ref() else {
            return fail(GsrStatus::NullPointer, "config is null");
        };
        let cfg = match c.settings.to_config() {
            Ok(cfg) => cfg,
            Err(e) => return fail(GsrStatus::Config, e.to_string()),
        };
        let result = match data.as_ref() {
            Some(d) => run_on_dataset(&cfg, &d.inner),
            None => run_experiment(&cfg),
        };
        match result {
            Ok(r) => {
                *out = Box::into_raw(Box::new(GsrRunRecord { inner: r }));
                GsrStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Training R² of the best solution; NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live record handle.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_train_r2(r: *const GsrRunRecord) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.inner.summary.train_r2)
}

/// Validation R²; NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live record handle.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_validation_r2(r: *const GsrRunRecord) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.inner.summary.validation_r2)
}

/// Test R²; NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live record handle.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_test_r2(r: *const GsrRunRecord) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.inner.summary.test_r2)
}

/// Evaluations used by the run; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live record handle.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_evaluations(r: *const GsrRunRecord) -> u64 {
    r.as_ref().map_or(0, |r| r.inner.summary.evaluations)
}

/// Copies the infix expression of the best solution. `needed` (optional)
/// receives the required buffer size including the terminator.
///
/// # Safety
/// `r` must be a live record; `buf` null or `len` writable bytes; `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_expression(
    r: *const GsrRunRecord,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> GsrStatus {
    guard(|| match r.as_ref() {
        None => fail(GsrStatus::NullPointer, "record is null"),
        Some(r) => copy_out(&r.inner.summary.expression, buf, len, needed),
    })
}

/// Writes the record as line-delimited JSON to `path`.
///
/// # Safety
/// `r` must be a live record and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_write_jsonl(r: *const GsrRunRecord, path: *const c_char) -> GsrStatus {
    guard(|| {
        let Some(r) = r.as_ref() else {
            return fail(GsrStatus::NullPointer, "record is null");
        };
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = match File::create(path) {
            Ok(f) => f,
            Err(e) => return fail(GsrStatus::Io, format!("{path}: {e}")),
        };
        match r.inner.write_jsonl(BufWriter::new(file)) {
            Ok(()) => GsrStatus::Ok,
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `r` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsr_record_free(r: *mut GsrRunRecord) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Fills `out` with the row-major node-proximity matrix of the binary
/// template of `height`. `nodes` (optional) receives the node count; `len`
/// must be at least its square.
///
/// # Safety
/// `out` must be null or point to `len` writable doubles; `nodes` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gsr_node_proximity(height: usize, out: *mut f64, len: usize, nodes: *mut usize) -> GsrStatus {
    guard(|| {
        let t = match Template::new(height, 2) {
            Ok(t) => t,
            Err(e) => return fail(GsrStatus::InvalidArgument, e.to_string()),
        };
        let n = t.node_count();
        if !nodes.is_null() {
            *nodes = n;
        }
        if out.is_null() || len < n * n {
            return fail(GsrStatus::BufferTooSmall, format!("need {} doubles, got {len}", n * n));
        }
        let m = measure_node_proximity(&t);
        ptr::copy_nonoverlapping(m.values().as_ptr(), out, n * n);
        GsrStatus::Ok
    })
}

