//! C ABI over a trained spawnlab checkpoint.
//!
//! A model is an opaque handle created by [`spawnlab_model_load`] and
//! released with [`spawnlab_model_free`]. Every fallible call returns a
//! [`SpawnlabStatus`]; on failure the message is available from
//! [`spawnlab_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spawnlab::cli::{load_checkpoint, spawn, Checkpoint};
use spawnlab::corpus::SpeakerMetadata;
use spawnlab::evalmetrics::cosine_distance;
use spawnlab::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    UnknownLabel = 6,
    Degenerate = 7,
    Numerical = 8,
    Panic = 9,
}

/// A loaded checkpoint.
pub struct SpawnlabModel {
    ck: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SpawnlabStatus {
    match err {
        Error::Io { .. } => SpawnlabStatus::Io,
        Error::Parse { .. } | Error::Json(_) => SpawnlabStatus::Parse,
        Error::Shape(_) => SpawnlabStatus::Shape,
        Error::Vocabulary { .. } => SpawnlabStatus::UnknownLabel,
        Error::Degenerate(_) => SpawnlabStatus::Degenerate,
        Error::NonFinite { .. } => SpawnlabStatus::Numerical,
        _ => SpawnlabStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SpawnlabStatus, String)>) -> SpawnlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpawnlabStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpawnlabStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SpawnlabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SpawnlabStatus, String) {
    (SpawnlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SpawnlabStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            SpawnlabStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn model_arg<'a>(
    m: *const SpawnlabModel,
) -> Result<&'a SpawnlabModel, (SpawnlabStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn slice_arg<'a>(
    p: *const f64,
    len: usize,
    what: &str,
) -> Result<&'a [f64], (SpawnlabStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spawnlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads `checkpoint.json` from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spawnlab_model_load(
    path: *const c_char,
    out: *mut *mut SpawnlabModel,
) -> SpawnlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = load_checkpoint(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SpawnlabModel { ck }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`spawnlab_model_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn spawnlab_model_free(model: *mut SpawnlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Speaker embedding width, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spawnlab_model_speaker_dim(model: *const SpawnlabModel) -> usize {
    model.as_ref().map_or(0, |m| m.ck.state.prior.dim)
}

/// Writes `log p(s | locale, gender)` to `*out`.
///
/// # Safety
/// String arguments must be NUL-terminated, `s` must hold `len` doubles and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spawnlab_prior_log_prob(
    model: *const SpawnlabModel,
    locale: *const c_char,
    gender: *const c_char,
    s: *const f64,
    len: usize,
    out: *mut f64,
) -> SpawnlabStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = SpeakerMetadata {
            speaker_id: 0,
            locale: str_arg(locale, "locale")?.to_string(),
            gender: str_arg(gender, "gender")?.to_string(),
        };
        let s = slice_arg(s, len, "s")?;
        *out = m.ck.state.prior.log_prob(&c, s).map_err(lib_err)?;
        Ok(())
    })
}

/// Draws one speaker embedding at `temperature` into `out[0..len]`; `len`
/// must equal the speaker dimension. The draw matches the first sample of
/// `spawnlab spawn` with the same seed.
///
/// # Safety
/// String arguments must be NUL-terminated and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn spawnlab_sample_speaker(
    model: *const SpawnlabModel,
    locale: *const c_char,
    gender: *const c_char,
    temperature: f64,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> SpawnlabStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dim = m.ck.state.prior.dim;
        if len != dim {
            return Err((
                SpawnlabStatus::Shape,
                format!("output holds {len} values, speaker dimension is {dim}"),
            ));
        }
        let locale = str_arg(locale, "locale")?;
        let gender = str_arg(gender, "gender")?;
        let drawn = spawn(&m.ck, locale, gender, 1, temperature, seed).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&drawn[0].embedding);
        Ok(())
    })
}

/// Cosine distance `1 - cos(a, b)` of two length-`len` vectors.
///
/// # Safety
/// `a` and `b` must hold `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spawnlab_cosine_distance(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> SpawnlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = slice_arg(a, len, "a")?;
        let b = slice_arg(b, len, "b")?;
        *out = cosine_distance(a, b).map_err(lib_err)?;
        Ok(())
    })
}
