//! C ABI over `moviedesc`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns an [`MdStatus`]
//! and leaves a message retrievable with [`md_last_error`] on the calling
//! thread. Strings handed out by the library are released with
//! [`md_string_free`]. No call unwinds across the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use moviedesc::classifiers::ClassifierBank;
use moviedesc::corpus::Clip;
use moviedesc::lstm::{ensemble_generate, Ensemble};
use moviedesc::metrics::{meteor, MeteorConfig};
use moviedesc::text::tokenize;
use moviedesc::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, wrong length or out-of-range value.
    InvalidArgument = 1,
    Io = 2,
    /// A file exists but does not parse as the expected container.
    Format = 3,
    Numeric = 4,
    /// A panic was caught at the boundary.
    Internal = 5,
}

/// A trained, selected classifier bank.
pub struct MdBank {
    bank: ClassifierBank,
}

/// An LSTM ensemble ready for generation.
pub struct MdEnsemble {
    ensemble: Ensemble,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> MdStatus {
    match e {
        Error::Io { .. } | Error::MissingArtifact { .. } => MdStatus::Io,
        Error::Parse { .. } | Error::Serde(_) => MdStatus::Format,
        Error::Numeric(_) => MdStatus::Numeric,
        _ => MdStatus::InvalidArgument,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), (MdStatus, String)>) -> MdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MdStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MdStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (MdStatus, String) {
    (status_of(&e), e.to_string())
}

fn arg(msg: impl Into<String>) -> (MdStatus, String) {
    (MdStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MdStatus, String)> {
    if p.is_null() {
        return Err(arg(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| arg(format!("{name} is not UTF-8")))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), (MdStatus, String)> {
    let c = CString::new(s).map_err(|_| arg("string contains NUL"))?;
    // SAFETY: callers check `out` for null before reaching here.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next library call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn md_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn md_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn md_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a bank file (`bank.selected.json`) into `*out`.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_bank_load(path: *const c_char, out: *mut *mut MdBank) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg("out is null"));
        }
        let path = str_arg(path, "path")?;
        let bank = ClassifierBank::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MdBank { bank }));
        Ok(())
    })
}

/// # Safety
/// `bank` is null or a handle from [`md_bank_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn md_bank_free(bank: *mut MdBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of classifiers, which is the score vector length. 0 for null.
///
/// # Safety
/// `bank` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_bank_len(bank: *const MdBank) -> usize {
    bank.as_ref().map_or(0, |b| b.bank.len())
}

/// Label text of classifier `index`, in score-vector order. Free the
/// result with [`md_string_free`].
///
/// # Safety
/// `bank` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_bank_label(
    bank: *const MdBank,
    index: usize,
    out: *mut *mut c_char,
) -> MdStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| arg("bank is null"))?;
        if out.is_null() {
            return Err(arg("out is null"));
        }
        let c = b
            .bank
            .classifiers
            .get(index)
            .ok_or_else(|| arg(format!("index {index} out of range 0..{}", b.bank.len())))?;
        out_string(c.label.text.clone(), out)
    })
}

/// Scores one clip. Channel `i` is named `names[i]` and holds `dims[i]`
/// values at `values[i]`. Writes [`md_bank_len`] scores in (0,1) to
/// `out`, which has room for `out_len`.
///
/// # Safety
/// The three arrays have `n_channels` entries; each `values[i]` points to
/// `dims[i]` doubles; `out` points to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn md_bank_score(
    bank: *const MdBank,
    names: *const *const c_char,
    values: *const *const f64,
    dims: *const usize,
    n_channels: usize,
    out: *mut f64,
    out_len: usize,
) -> MdStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| arg("bank is null"))?;
        if n_channels > 0 && (names.is_null() || values.is_null() || dims.is_null()) {
            return Err(arg("channel arrays are null"));
        }
        if out.is_null() {
            return Err(arg("out is null"));
        }
        if out_len != b.bank.len() {
            return Err(arg(format!(
                "out_len {out_len}, bank has {} classifiers",
                b.bank.len()
            )));
        }
        let mut features = BTreeMap::new();
        for i in 0..n_channels {
            let name = str_arg(*names.add(i), "channel name")?;
            let (v, d) = (*values.add(i), *dims.add(i));
            if v.is_null() && d > 0 {
                return Err(arg(format!("values for `{name}` are null")));
            }
            let data = if d == 0 {
                vec![]
            } else {
                std::slice::from_raw_parts(v, d).to_vec()
            };
            features.insert(name.to_string(), data);
        }
        let clip = Clip {
            clip_id: "ffi".into(),
            features,
        };
        let sv = b.bank.score_clip(&clip).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&sv.scores);
        Ok(())
    })
}

/// Loads an ensemble file (`ensemble.json`) into `*out`.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_ensemble_load(
    path: *const c_char,
    out: *mut *mut MdEnsemble,
) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg("out is null"));
        }
        let path = str_arg(path, "path")?;
        let ensemble = Ensemble::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MdEnsemble { ensemble }));
        Ok(())
    })
}

/// # Safety
/// `e` is null or a handle from [`md_ensemble_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn md_ensemble_free(e: *mut MdEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Expected visual input length. 0 for null.
///
/// # Safety
/// `e` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_ensemble_visual_dim(e: *const MdEnsemble) -> usize {
    e.as_ref()
        .and_then(|e| e.ensemble.members().first())
        .map_or(0, |n| n.config.visual_dim)
}

/// Greedy generation from a score vector. Writes a space-separated
/// sentence to `*out`; free it with [`md_string_free`].
///
/// # Safety
/// `visual` points to `visual_len` doubles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_ensemble_generate(
    e: *const MdEnsemble,
    visual: *const f64,
    visual_len: usize,
    max_len: usize,
    out: *mut *mut c_char,
) -> MdStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| arg("ensemble is null"))?;
        if out.is_null() || (visual.is_null() && visual_len > 0) {
            return Err(arg("null pointer argument"));
        }
        if max_len == 0 {
            return Err(arg("max_len must be at least 1"));
        }
        let v = if visual_len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(visual, visual_len)
        };
        let words = ensemble_generate(&e.ensemble, v, max_len).map_err(lib_err)?;
        out_string(words.join(" "), out)
    })
}

/// METEOR-lite of `candidate` against one `reference`, both raw text,
/// with default parameters.
///
/// # Safety
/// Both strings are NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_meteor(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg("out is null"));
        }
        let c = tokenize(str_arg(candidate, "candidate")?);
        let r = tokenize(str_arg(reference, "reference")?);
        if r.is_empty() {
            return Err(arg("reference has no tokens"));
        }
        *out = meteor(&c, &[r], &MeteorConfig::default()).map_err(lib_err)?;
        Ok(())
    })
}
