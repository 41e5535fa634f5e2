//! C ABI over `seqscript`: load a checkpoint, classify crops, query the
//! model. Every fallible call returns an [`SsStatus`]; on failure the
//! message is available from [`ss_last_error`] on the same thread.
//!
//! Handles are opaque. A handle from [`ss_model_load`] must be released with
//! [`ss_model_free`] exactly once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use seqscript::data::pgm::read_pgm;
use seqscript::layers::Parameters;
use seqscript::model::{checkpoint, Model};
use seqscript::train::eval::classify;
use seqscript::{Error, ErrorClass, Tensor};

/// Result of every fallible call. Values 2 to 6 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    Usage = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numeric = 6,
    /// An output buffer was too small; the needed size was reported.
    BufferTooSmall = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// Opaque model handle.
pub struct SsModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SsStatus {
    match e.class() {
        ErrorClass::Usage => SsStatus::Usage,
        ErrorClass::Io => SsStatus::Io,
        ErrorClass::Format => SsStatus::Format,
        ErrorClass::Config => SsStatus::Config,
        ErrorClass::Numeric => SsStatus::Numeric,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SsStatus, String)>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SsStatus::Internal
        }
    }
}

fn lib(e: Error) -> (SsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SsStatus, String) {
    (SsStatus::NullArgument, format!("{what} is null"))
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load(path: *const c_char, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| (SsStatus::Usage, "path is not UTF-8".to_string()))?;
        let model = checkpoint::load(Path::new(p)).map_err(lib)?;
        *out = Box::into_raw(Box::new(SsModel { model }));
        Ok(())
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load_bytes(bytes: *const u8, len: usize, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::from_bytes(std::slice::from_raw_parts(bytes, len)).map_err(lib)?;
        *out = Box::into_raw(Box::new(SsModel { model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from a load call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ss_model_free(model: *mut SsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Learnable parameter count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_model_param_count(model: *const SsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.param_count())
}

/// Number of scripts the model distinguishes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_model_num_scripts(model: *const SsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.scripts.len())
}

/// Copies script `index`'s name, NUL-terminated, into `buf`. `*needed`
/// receives the size including the terminator even when `cap` is too small.
///
/// # Safety
/// `buf` must have `cap` writable bytes (or be null with `cap` 0); `needed`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn ss_model_script_name(
    model: *const SsModel,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let name = m.model.config.scripts.get(index).ok_or_else(|| {
            (SsStatus::Usage, format!("script index {index} out of range (have {})", m.model.config.scripts.len()))
        })?;
        let size = name.len() + 1;
        if !needed.is_null() {
            *needed = size;
        }
        if buf.is_null() || cap < size {
            return Err((SsStatus::BufferTooSmall, format!("need {size} bytes, got {cap}")));
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

unsafe fn write_result(
    model: &Model,
    image: &Tensor,
    script: *mut i32,
    counts: *mut usize,
    counts_len: usize,
) -> Result<(), (SsStatus, String)> {
    let c = classify(model, image).map_err(lib)?;
    *script = c.script.map_or(-1, |s| s as i32);
    if !counts.is_null() {
        if counts_len < c.counts.len() {
            return Err((SsStatus::BufferTooSmall, format!("counts needs {} slots, got {counts_len}", c.counts.len())));
        }
        ptr::copy_nonoverlapping(c.counts.as_ptr(), counts, c.counts.len());
    }
    Ok(())
}

/// Classifies a grayscale crop given as `height * width` row-major values
/// in [0, 1]. `*script` receives the zero-based script index, or -1 when
/// every frame is blank. If `counts` is non-null it receives the per-script
/// frame votes and must hold at least `ss_model_num_scripts` entries.
///
/// # Safety
/// `pixels` must hold `height * width` doubles; `script` must be writable;
/// `counts` must be null or hold `counts_len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn ss_model_infer(
    model: *const SsModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    script: *mut i32,
    counts: *mut usize,
    counts_len: usize,
) -> SsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if script.is_null() {
            return Err(null("script"));
        }
        let n = height.checked_mul(width).ok_or((SsStatus::Usage, "image size overflows".to_string()))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        let image = Tensor::from_vec(&[height, width, 1], data).map_err(lib)?;
        write_result(&m.model, &image, script, counts, counts_len)
    })
}

/// Like [`ss_model_infer`], for an in-memory binary PGM file.
///
/// # Safety
/// `bytes` must hold `len` readable bytes; see [`ss_model_infer`] for the
/// outputs.
#[no_mangle]
pub unsafe extern "C" fn ss_model_infer_pgm(
    model: *const SsModel,
    bytes: *const u8,
    len: usize,
    script: *mut i32,
    counts: *mut usize,
    counts_len: usize,
) -> SsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if script.is_null() {
            return Err(null("script"));
        }
        let image = read_pgm(std::slice::from_raw_parts(bytes, len)).map_err(lib)?;
        write_result(&m.model, &image, script, counts, counts_len)
    })
}
