//! C ABI over the enf-cascade library.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an [`EnfStatus`];
//! on failure a description is available from [`enf_last_error`] on the same
//! thread. Strings returned through out-parameters are released with
//! [`enf_string_free`], sample buffers with [`enf_values_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use enf_cascade::enf::extract_enf;
use enf_cascade::signal_io::load_recording;
use enf_cascade::{CascadeModel, Error, Nominal, Recording, SignalType};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    UnsupportedVersion = 5,
    /// The recording could not be analysed (too short, silent, no hum...).
    Signal = 6,
    /// The model cannot classify this recording (missing kind or grid).
    Classification = 7,
    Panic = 8,
}

/// Signal type selector for [`enf_extract`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnfSignalType {
    Audio = 0,
    Power = 1,
}

/// Opaque trained model.
pub struct EnfModel {
    inner: CascadeModel,
}

/// Opaque recording.
pub struct EnfRecording {
    inner: Recording,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EnfStatus {
    match e.root_cause() {
        Error::Io { .. } => EnfStatus::Io,
        Error::CorruptModel(_) => EnfStatus::Corrupt,
        Error::UnsupportedVersion { .. } => EnfStatus::UnsupportedVersion,
        Error::InvalidArgument(_) | Error::Config(_) | Error::DimensionMismatch { .. } => EnfStatus::InvalidArgument,
        Error::KindUnavailable(_)
        | Error::GridMissing(_)
        | Error::NotEnoughPoles { .. }
        | Error::NeedTwoClasses
        | Error::InsufficientData(_) => EnfStatus::Classification,
        _ => EnfStatus::Signal,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (EnfStatus, String)>) -> EnfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EnfStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            EnfStatus::Panic
        }
    }
}

fn fail(e: Error) -> (EnfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (EnfStatus, String) {
    (EnfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, (EnfStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (EnfStatus::InvalidArgument, "path is not UTF-8".to_string()))
}

/// Message for the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn enf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn enf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model archive.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn enf_model_load(path: *const c_char, out: *mut *mut EnfModel) -> EnfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let model = CascadeModel::load(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(EnfModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`enf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn enf_model_free(model: *mut EnfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a WAV or text recording. `declared_type` is -1 for unknown, otherwise
/// an [`EnfSignalType`] value.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn enf_recording_load(
    path: *const c_char,
    declared_type: i32,
    out: *mut *mut EnfRecording,
) -> EnfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let declared = signal_type_arg(declared_type, true)?;
        let rec = load_recording(path, declared).map_err(fail)?;
        *out = Box::into_raw(Box::new(EnfRecording { inner: rec }));
        Ok(())
    })
}

/// Wraps `len` samples at `sample_rate_hz`; the samples are copied.
///
/// # Safety
/// `samples` must point to `len` readable doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn enf_recording_from_samples(
    samples: *const f64,
    len: usize,
    sample_rate_hz: f64,
    out: *mut *mut EnfRecording,
) -> EnfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if samples.is_null() {
            return Err(null("samples"));
        }
        let data = std::slice::from_raw_parts(samples, len).to_vec();
        let rec = Recording::new(data, sample_rate_hz).map_err(fail)?;
        *out = Box::into_raw(Box::new(EnfRecording { inner: rec }));
        Ok(())
    })
}

/// # Safety
/// `rec` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn enf_recording_free(rec: *mut EnfRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

fn signal_type_arg(v: i32, allow_unknown: bool) -> Result<Option<SignalType>, (EnfStatus, String)> {
    match v {
        -1 if allow_unknown => Ok(None),
        0 => Ok(Some(SignalType::Audio)),
        1 => Ok(Some(SignalType::Power)),
        _ => Err((EnfStatus::InvalidArgument, format!("signal type {v}"))),
    }
}

/// Runs the full cascade and returns the report as JSON through `out_json`.
///
/// # Safety
/// All pointers must be valid; release the string with [`enf_string_free`].
#[no_mangle]
pub unsafe extern "C" fn enf_classify_json(
    model: *const EnfModel,
    rec: *const EnfRecording,
    out_json: *mut *mut c_char,
) -> EnfStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        let report = model.inner.classify(&rec.inner).map_err(fail)?;
        let json = CString::new(report.to_json()).expect("JSON has no NUL");
        *out_json = json.into_raw();
        Ok(())
    })
}

/// Runs the full cascade and writes the decided grid letter (`'A'`..`'L'`).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn enf_classify_label(
    model: *const EnfModel,
    rec: *const EnfRecording,
    out_label: *mut c_char,
) -> EnfStatus {
    guard(|| {
        if out_label.is_null() {
            return Err(null("out_label"));
        }
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        let report = model.inner.classify(&rec.inner).map_err(fail)?;
        let letter = report.final_label.to_string().into_bytes()[0];
        *out_label = letter as c_char;
        Ok(())
    })
}

/// Extracts the ENF trace with default settings. `nominal_hz` is 50 or 60.
/// The buffer is returned through `out_values`/`out_len` and must be released
/// with [`enf_values_free`].
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn enf_extract(
    rec: *const EnfRecording,
    nominal_hz: i32,
    signal_type: EnfSignalType,
    out_values: *mut *mut f64,
    out_len: *mut usize,
) -> EnfStatus {
    guard(|| {
        if out_values.is_null() || out_len.is_null() {
            return Err(null("output"));
        }
        let rec = rec.as_ref().ok_or_else(|| null("recording"))?;
        let nominal = match nominal_hz {
            50 => Nominal::Hz50,
            60 => Nominal::Hz60,
            _ => return Err((EnfStatus::InvalidArgument, format!("nominal frequency {nominal_hz}"))),
        };
        let ty = match signal_type {
            EnfSignalType::Audio => SignalType::Audio,
            EnfSignalType::Power => SignalType::Power,
        };
        let enf = extract_enf(&rec.inner, nominal, ty, &Default::default()).map_err(fail)?;
        let boxed = enf.values_hz.into_boxed_slice();
        *out_len = boxed.len();
        *out_values = Box::into_raw(boxed).cast();
        Ok(())
    })
}

/// # Safety
/// `values`/`len` must come from [`enf_extract`].
#[no_mangle]
pub unsafe extern "C" fn enf_values_free(values: *mut f64, len: usize) {
    if !values.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(values, len)));
    }
}

/// # Safety
/// `s` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn enf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
