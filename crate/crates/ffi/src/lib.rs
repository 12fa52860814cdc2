//! C ABI over the plmr pipeline.
//!
//! Every function returns a status code (`PLMR_OK` on success). On failure
//! the message is kept per thread and can be read with [`plmr_last_error`].
//! Handles are opaque; free each with its `_free` function. Strings returned
//! through `char **` out-parameters must be released with
//! [`plmr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use plmr::baselines::KtIdemModel;
use plmr::evaluation::{accuracy_f1, fit_plmr, rmse, ExperimentSpec, PreparedCourse};
use plmr::eventlog::StudentId;
use plmr::plmr::{sigmoid, PlmrModel as CoreModel};
use plmr::Error;

pub const PLMR_OK: i32 = 0;
/// A required pointer argument was null.
pub const PLMR_ERR_NULL: i32 = 1;
/// A string argument was not valid UTF-8.
pub const PLMR_ERR_UTF8: i32 = 2;
pub const PLMR_ERR_IO: i32 = 3;
/// Malformed JSON, log line, catalog or model document.
pub const PLMR_ERR_PARSE: i32 = 4;
/// Inputs parsed but violate a precondition.
pub const PLMR_ERR_VALIDATION: i32 = 5;
pub const PLMR_ERR_DIMENSION: i32 = 6;
pub const PLMR_ERR_UNKNOWN_STUDENT: i32 = 7;
pub const PLMR_ERR_DIVERGENCE: i32 = 8;
/// Invalid protocol/target combination or an empty split.
pub const PLMR_ERR_PROTOCOL: i32 = 9;
/// A Rust panic was caught at the boundary.
pub const PLMR_ERR_PANIC: i32 = 10;

/// An ingested and featurized course.
pub struct PlmrCourse {
    inner: PreparedCourse,
}

/// A fitted personalized multi-regression model.
pub struct PlmrModel {
    inner: CoreModel,
}

/// A knowledge-tracing model with per-item guess and slip.
pub struct PlmrKtModel {
    inner: KtIdemModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => PLMR_ERR_IO,
        Error::Record { .. }
        | Error::Catalog(_)
        | Error::ModelDocument(_)
        | Error::Csv(_)
        | Error::Json(_) => PLMR_ERR_PARSE,
        Error::Dimension { .. } => PLMR_ERR_DIMENSION,
        Error::ColdStart(_) => PLMR_ERR_UNKNOWN_STUDENT,
        Error::Divergence { .. } => PLMR_ERR_DIVERGENCE,
        Error::Protocol(_) | Error::EmptySplit(_) => PLMR_ERR_PROTOCOL,
        _ => PLMR_ERR_VALIDATION,
    }
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(PLMR_ERR_PARSE, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Runs `f`, records any failure or panic and returns the status code.
fn guard(f: impl FnOnce() -> Outcome) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PLMR_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            PLMR_ERR_PANIC
        }
    }
}

fn null() -> Failure {
    Failure(PLMR_ERR_NULL, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(PLMR_ERR_UTF8, e.to_string()))
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Outcome {
    let c = CString::new(s).map_err(|e| Failure(PLMR_ERR_VALIDATION, e.to_string()))?;
    write_out(out, c.into_raw())
}

fn student(s: &str) -> Result<StudentId, Failure> {
    StudentId::new(s).map_err(|e| Failure(PLMR_ERR_VALIDATION, e.to_string()))
}

/// Message of the last failure on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn plmr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn plmr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn plmr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a catalog and event log and featurizes every graded observation.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_load(
    log_path: *const c_char,
    catalog_path: *const c_char,
    out: *mut *mut PlmrCourse,
) -> i32 {
    guard(|| {
        let log = str_arg(log_path)?;
        let catalog = str_arg(catalog_path)?;
        let inner = PreparedCourse::load(log, catalog)?;
        write_out(out, Box::into_raw(Box::new(PlmrCourse { inner })))
    })
}

/// # Safety
/// `course` must come from [`plmr_course_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_free(course: *mut PlmrCourse) {
    if !course.is_null() {
        drop(Box::from_raw(course));
    }
}

/// Number of graded (student, homework) rows.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_num_rows(course: *const PlmrCourse, out: *mut usize) -> i32 {
    guard(|| write_out(out, ref_arg(course)?.inner.matrix.rows.len()))
}

/// Number of raw feature columns per row.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_num_features(
    course: *const PlmrCourse,
    out: *mut usize,
) -> i32 {
    guard(|| write_out(out, ref_arg(course)?.inner.matrix.width()))
}

/// Copies the raw features of row `row` into `values` (length `len`, which
/// must equal the feature count) and its grade into `grade`.
///
/// # Safety
/// `values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_row(
    course: *const PlmrCourse,
    row: usize,
    values: *mut f64,
    len: usize,
    grade: *mut f64,
) -> i32 {
    guard(|| {
        let m = &ref_arg(course)?.inner.matrix;
        let r = m.rows.get(row).ok_or_else(|| {
            Failure(
                PLMR_ERR_VALIDATION,
                format!("row {row} out of range ({})", m.rows.len()),
            )
        })?;
        if len != r.values.len() {
            return Err(Error::Dimension {
                expected: r.values.len(),
                got: len,
            }
            .into());
        }
        if values.is_null() {
            return Err(null());
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(&r.values);
        write_out(grade, r.grade)
    })
}

/// Student id of row `row` as a newly allocated string.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_row_student(
    course: *const PlmrCourse,
    row: usize,
    out: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let m = &ref_arg(course)?.inner.matrix;
        let r = m
            .rows
            .get(row)
            .ok_or_else(|| Failure(PLMR_ERR_VALIDATION, format!("row {row} out of range")))?;
        write_string(out, r.student.to_string())
    })
}

/// Runs one experiment described by a JSON experiment spec (missing fields
/// take their defaults) and returns the metrics report as JSON.
///
/// # Safety
/// Pointers must be valid; `spec_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_evaluate(
    course: *const PlmrCourse,
    spec_json: *const c_char,
    report_json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let course = &ref_arg(course)?.inner;
        let spec: ExperimentSpec = serde_json::from_str(str_arg(spec_json)?)?;
        let report = plmr::evaluation::run_experiment(course, &spec)?;
        write_string(report_json, serde_json::to_string(&report)?)
    })
}

/// Fits PLMR on the training rows selected by a JSON experiment spec.
///
/// # Safety
/// Pointers must be valid; `spec_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn plmr_course_train(
    course: *const PlmrCourse,
    spec_json: *const c_char,
    out: *mut *mut PlmrModel,
) -> i32 {
    guard(|| {
        let course = &ref_arg(course)?.inner;
        let spec: ExperimentSpec = serde_json::from_str(str_arg(spec_json)?)?;
        let run = fit_plmr(course, &spec)?;
        write_out(out, Box::into_raw(Box::new(PlmrModel { inner: run.model })))
    })
}

/// # Safety
/// `json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn plmr_model_from_json(
    json: *const c_char,
    out: *mut *mut PlmrModel,
) -> i32 {
    guard(|| {
        let inner = CoreModel::from_json(str_arg(json)?)?;
        write_out(out, Box::into_raw(Box::new(PlmrModel { inner })))
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_model_to_json(model: *const PlmrModel, out: *mut *mut c_char) -> i32 {
    guard(|| write_string(out, ref_arg(model)?.inner.to_json()))
}

/// Number of feature columns the model expects.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_model_num_features(model: *const PlmrModel, out: *mut usize) -> i32 {
    guard(|| write_out(out, ref_arg(model)?.inner.num_features()))
}

unsafe fn predict_with(
    model: *const PlmrModel,
    student_id: *const c_char,
    features: *const f64,
    len: usize,
    out: *mut f64,
    proba: bool,
) -> i32 {
    guard(|| {
        let m = &ref_arg(model)?.inner;
        let s = student(str_arg(student_id)?)?;
        let score = m.predict_raw(&s, slice_arg(features, len)?)?;
        let v = if proba { sigmoid(score) } else { score };
        write_out(out, v)
    })
}

/// Score `b_s + p_s' W f` for raw features `f` (the model's stored
/// standardization is applied first).
///
/// # Safety
/// `features` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plmr_model_predict(
    model: *const PlmrModel,
    student_id: *const c_char,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> i32 {
    predict_with(model, student_id, features, len, out, false)
}

/// Sigmoid of [`plmr_model_predict`].
///
/// # Safety
/// `features` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plmr_model_predict_proba(
    model: *const PlmrModel,
    student_id: *const c_char,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> i32 {
    predict_with(model, student_id, features, len, out, true)
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn plmr_model_free(model: *mut PlmrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Root mean squared error of two length-`n` arrays.
///
/// # Safety
/// Arrays must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn plmr_rmse(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| write_out(out, rmse(slice_arg(pred, n)?, slice_arg(truth, n)?)?))
}

/// Accuracy and F1 of binary labels (nonzero = positive).
///
/// # Safety
/// Arrays must hold `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn plmr_accuracy_f1(
    pred: *const u8,
    truth: *const u8,
    n: usize,
    accuracy: *mut f64,
    f1: *mut f64,
) -> i32 {
    guard(|| {
        let p: Vec<bool> = slice_arg(pred, n)?.iter().map(|v| *v != 0).collect();
        let t: Vec<bool> = slice_arg(truth, n)?.iter().map(|v| *v != 0).collect();
        let (a, f) = accuracy_f1(&p, &t)?;
        write_out(accuracy, a)?;
        write_out(f1, f)
    })
}

/// # Safety
/// `json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn plmr_kt_from_json(json: *const c_char, out: *mut *mut PlmrKtModel) -> i32 {
    guard(|| {
        let inner = KtIdemModel::from_json(str_arg(json)?)?;
        write_out(out, Box::into_raw(Box::new(PlmrKtModel { inner })))
    })
}

/// Mastery probability before any response.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_kt_initial_mastery(model: *const PlmrKtModel, out: *mut f64) -> i32 {
    guard(|| write_out(out, ref_arg(model)?.inner.initial_mastery()))
}

/// Probability of a correct response on `item` at mastery `mastery`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_kt_predict(
    model: *const PlmrKtModel,
    mastery: f64,
    item: *const c_char,
    out: *mut f64,
) -> i32 {
    guard(|| write_out(out, ref_arg(model)?.inner.predict(mastery, str_arg(item)?)?))
}

/// Mastery after observing a response (`correct` nonzero = correct),
/// including the learning transition.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn plmr_kt_update(
    model: *const PlmrKtModel,
    mastery: f64,
    item: *const c_char,
    correct: i32,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = ref_arg(model)?
            .inner
            .update(mastery, str_arg(item)?, correct != 0)?;
        write_out(out, m)
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn plmr_kt_free(model: *mut PlmrKtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
