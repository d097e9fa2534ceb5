//! C ABI over `cdt-core`.
//!
//! Every fallible function returns a [`CdtStatus`]. On failure the message
//! is kept in a thread-local buffer readable through [`cdt_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned through out-pointers are owned by the caller and must
//! be released with [`cdt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cdt_core::config::Config;
use cdt_core::data::{load_bundle, synth_generate, DatasetBundle};
use cdt_core::deep::DeepModel;
use cdt_core::eval::run_experiment;
use cdt_core::features::FeatureVector;
use cdt_core::model::{read_checkpoint, CdtModel as TranslationModel, Checkpoint, RankingModel};
use cdt_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Validation = 6,
    Checkpoint = 7,
    Numeric = 8,
    Panic = 9,
}

/// Loaded dataset bundle.
pub struct CdtBundle {
    inner: DatasetBundle,
}

/// Trained model restored from a checkpoint.
pub struct CdtModel {
    dim: usize,
    scorer: Box<dyn RankingModel + Send>,
    deep: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> CdtStatus {
    match err {
        Error::Io { .. } => CdtStatus::Io,
        Error::Parse { .. } | Error::Json(_) => CdtStatus::Parse,
        Error::Config(_) => CdtStatus::Config,
        Error::Validation(_) | Error::Range(_) | Error::Shape(_) | Error::Sampling(_) => CdtStatus::Validation,
        Error::Checkpoint(_) => CdtStatus::Checkpoint,
        Error::Divergence(_) => CdtStatus::Numeric,
    }
}

struct Failure(CdtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CdtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CdtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CdtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(CdtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Loads `config_path` (or the defaults when null) and applies `n_overrides`
/// `section.key=value` strings.
unsafe fn load_config(
    config_path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
) -> Result<Config, Failure> {
    let mut config = if config_path.is_null() {
        Config::default()
    } else {
        Config::load(PathBuf::from(unsafe { str_arg(config_path, "config_path") }?))?
    };
    if n_overrides > 0 {
        if overrides.is_null() {
            return Err(null("overrides"));
        }
        let raw = unsafe { std::slice::from_raw_parts(overrides, n_overrides) };
        let list = raw
            .iter()
            .map(|&p| unsafe { str_arg(p, "override") })
            .collect::<Result<Vec<_>, _>>()?;
        config.apply_overrides(&list)?;
    }
    config.validate()?;
    Ok(config)
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(CdtStatus::Validation, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn cdt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn cdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads a bundle from its descriptor file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_bundle_load(path: *const c_char, out: *mut *mut CdtBundle) -> CdtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { str_arg(path, "path") }?;
        let inner = load_bundle(path)?;
        unsafe { *out = Box::into_raw(Box::new(CdtBundle { inner })) };
        Ok(())
    })
}

/// Generates a synthetic bundle from the `[synth]` section of `config_path`
/// (defaults when null) with the given seed.
///
/// # Safety
/// `config_path` must be null or NUL-terminated; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_bundle_synth(
    config_path: *const c_char,
    seed: u64,
    out: *mut *mut CdtBundle,
) -> CdtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = unsafe { load_config(config_path, ptr::null(), 0) }?;
        let inner = synth_generate(&config.synth, seed)?.bundle;
        unsafe { *out = Box::into_raw(Box::new(CdtBundle { inner })) };
        Ok(())
    })
}

/// Target users, target items and source domain count.
///
/// # Safety
/// `bundle` must be a live handle; the out-pointers must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_bundle_shape(
    bundle: *const CdtBundle,
    n_users: *mut usize,
    n_items: *mut usize,
    n_sources: *mut usize,
) -> CdtStatus {
    guard(|| {
        let b = unsafe { bundle.as_ref() }.ok_or_else(|| null("bundle"))?;
        if n_users.is_null() || n_items.is_null() || n_sources.is_null() {
            return Err(null("output pointer"));
        }
        unsafe {
            *n_users = b.inner.target.n_users();
            *n_items = b.inner.target.n_items();
            *n_sources = b.inner.sources.len();
        }
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or a handle not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_bundle_free(bundle: *mut CdtBundle) {
    if !bundle.is_null() {
        drop(unsafe { Box::from_raw(bundle) });
    }
}

/// Runs the repeated-split experiment on `bundle` and returns the metrics
/// report as JSON in `out_json`.
///
/// # Safety
/// `bundle` must be a live handle, `config_path` null or NUL-terminated,
/// `overrides` an array of `n_overrides` NUL-terminated strings, `out_json`
/// writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_experiment_run(
    bundle: *const CdtBundle,
    config_path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out_json: *mut *mut c_char,
) -> CdtStatus {
    guard(|| {
        let b = unsafe { bundle.as_ref() }.ok_or_else(|| null("bundle"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let config = unsafe { load_config(config_path, overrides, n_overrides) }?;
        let report = run_experiment(&b.inner, &config.experiment, &config.settings())?;
        let json = into_c_string(report.to_json()?)?;
        unsafe { *out_json = json };
        Ok(())
    })
}

fn model_from(ckpt: Checkpoint) -> CdtModel {
    let dim = ckpt.params.dim();
    match ckpt.deep {
        Some(deep) => CdtModel {
            dim,
            deep: true,
            scorer: Box::new(DeepModel {
                params: ckpt.params,
                mlp: deep.mlp,
                index: ckpt.index,
                interaction: ckpt.interaction,
                add_interaction: deep.add_interaction,
            }),
        },
        None => CdtModel {
            dim,
            deep: false,
            scorer: Box::new(TranslationModel {
                params: ckpt.params,
                interaction: ckpt.interaction,
            }),
        },
    }
}

/// Restores a model from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_model_load(path: *const c_char, out: *mut *mut CdtModel) -> CdtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { str_arg(path, "path") }?;
        let model = model_from(read_checkpoint(path)?);
        unsafe { *out = Box::into_raw(Box::new(model)) };
        Ok(())
    })
}

/// Feature dimension the model expects.
///
/// # Safety
/// `model` must be a live handle; `dim` and `is_deep` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_model_info(model: *const CdtModel, dim: *mut usize, is_deep: *mut bool) -> CdtStatus {
    guard(|| {
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if dim.is_null() || is_deep.is_null() {
            return Err(null("output pointer"));
        }
        unsafe {
            *dim = m.dim;
            *is_deep = m.deep;
        }
        Ok(())
    })
}

/// Scores one sparse feature vector. `columns` must strictly increase and
/// include `item_column`, the active target item feature.
///
/// # Safety
/// `model` must be a live handle, `columns` and `values` arrays of `len`
/// elements, `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_model_score(
    model: *const CdtModel,
    columns: *const usize,
    values: *const f64,
    len: usize,
    item_column: usize,
    out: *mut f64,
) -> CdtStatus {
    guard(|| {
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len > 0 && (columns.is_null() || values.is_null()) {
            return Err(null("columns or values"));
        }
        let (cols, vals) = if len == 0 {
            (&[][..], &[][..])
        } else {
            unsafe {
                (
                    std::slice::from_raw_parts(columns, len),
                    std::slice::from_raw_parts(values, len),
                )
            }
        };
        let entries: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
        let user = entries.first().map_or(0, |e| e.0);
        let x = FeatureVector::new(entries, user, item_column)?;
        if x.max_column().is_some_and(|c| c >= m.dim) {
            return Err(Failure(
                CdtStatus::Validation,
                format!("column out of range for dimension {}", m.dim),
            ));
        }
        let score = m.scorer.score(&x)?;
        unsafe { *out = score };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cdt_model_free(model: *mut CdtModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}
