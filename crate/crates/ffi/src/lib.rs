//! C ABI over `patchcorr`.
//!
//! Every fallible function returns a [`PcStatus`]; on failure a message is
//! kept per thread and can be read with [`pc_last_error_message`]. Models are
//! opaque [`PcModel`] handles released with [`pc_model_free`]. Slices are
//! passed as pointer plus length; output buffers are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;

use patchcorr::embed::{self, EmbeddingPair};
use patchcorr::learn::TrainedModel;
use patchcorr::{crossing, diffparse, engineered, eval, explain};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    LengthMismatch = 5,
    BufferTooSmall = 6,
    InvalidInput = 7,
    Unsupported = 8,
    Panic = 9,
}

/// A trained classifier loaded from a model JSON file.
pub struct PcModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PcStatus, String);

type FfiResult = Result<(), Failure>;

fn fail<T>(status: PcStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult) -> PcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PcStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(PcStatus::NullArgument, format!("`{what}` is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return fail(PcStatus::NullArgument, format!("`{what}` is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().map_or_else(
        || fail(PcStatus::NullArgument, format!("`{what}` is null")),
        Ok,
    )
}

unsafe fn model_ref<'a>(ptr: *const PcModel) -> Result<&'a PcModel, Failure> {
    ptr.as_ref()
        .map_or_else(|| fail(PcStatus::NullArgument, "`model` is null"), Ok)
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return fail(PcStatus::NullArgument, format!("`{what}` is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .or_else(|_| fail(PcStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model JSON file written by `patchcorr train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_model_load(path: *const c_char, out: *mut *mut PcModel) -> PcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let model = TrainedModel::load(Path::new(path)).map_err(|e| {
            let status = match e {
                patchcorr::learn::LearnError::Io(_) => PcStatus::Io,
                _ => PcStatus::Parse,
            };
            Failure(status, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(PcModel { inner: model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`pc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_model_free(model: *mut PcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of features the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_model_feature_count(
    model: *const PcModel,
    out: *mut usize,
) -> PcStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?.inner.feature_count;
        Ok(())
    })
}

/// Short learner name (`lr`, `nb`, `dt`, `rf`, `gbt` or `dnn`) as a static
/// string, or null for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pc_model_kind(model: *const PcModel) -> *const c_char {
    const NAMES: [&str; 6] = ["lr\0", "nb\0", "dt\0", "rf\0", "gbt\0", "dnn\0"];
    match model.as_ref() {
        None => std::ptr::null(),
        Some(m) => {
            let short = m.inner.kind().short_name();
            NAMES
                .iter()
                .find(|n| n.trim_end_matches('\0') == short)
                .map_or(std::ptr::null(), |n| n.as_ptr().cast())
        }
    }
}

/// Probability that one patch is correct.
///
/// # Safety
/// `features` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_model_predict(
    model: *const PcModel,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = slice(features, len, "features")?;
        let out = out_ref(out, "out")?;
        *out = predict_one(&m.inner, x)?;
        Ok(())
    })
}

fn predict_one(m: &TrainedModel, x: &[f64]) -> Result<f64, Failure> {
    if x.len() != m.feature_count {
        return fail(
            PcStatus::LengthMismatch,
            format!("expected {} features, got {}", m.feature_count, x.len()),
        );
    }
    m.predict_proba(x)
        .or_else(|e| fail(PcStatus::InvalidInput, e.to_string()))
}

/// Predicts `rows` patches stored row-major with `cols` features each.
///
/// # Safety
/// `matrix` must hold `rows * cols` doubles and `out` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn pc_model_predict_batch(
    model: *const PcModel,
    matrix: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let total = rows
            .checked_mul(cols)
            .map_or_else(|| fail(PcStatus::InvalidInput, "rows * cols overflows"), Ok)?;
        let x = slice(matrix, total, "matrix")?;
        let out = slice_mut(out, rows, "out")?;
        if cols == 0 {
            return fail(PcStatus::LengthMismatch, "cols is 0");
        }
        for (o, row) in out.iter_mut().zip(x.chunks_exact(cols)) {
            *o = predict_one(&m.inner, row)?;
        }
        Ok(())
    })
}

/// Shapley contributions of one prediction, against a background matrix
/// (`bg_rows` x feature count, row-major). Writes `feature_count`
/// contributions to `out` and the base value to `base`. Tree models are
/// explained in probability space (dt, rf) or margin space (gbt); logistic
/// regression in margin space. Naive Bayes and networks are refused.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pc_model_explain(
    model: *const PcModel,
    background: *const f64,
    bg_rows: usize,
    features: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
    base: *mut f64,
) -> PcStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let p = m.feature_count;
        if len != p {
            return fail(
                PcStatus::LengthMismatch,
                format!("expected {p} features, got {len}"),
            );
        }
        if out_len < p {
            return fail(
                PcStatus::BufferTooSmall,
                format!("need {p} slots, got {out_len}"),
            );
        }
        let bg = slice(background, bg_rows * p, "background")?;
        let x = slice(features, len, "features")?;
        let out = slice_mut(out, out_len, "out")?;
        let base = out_ref(base, "base")?;
        let rows: Vec<Vec<f64>> = bg.chunks_exact(p.max(1)).map(<[f64]>::to_vec).collect();
        let explainer = explain::Explainer::new(m, &rows).map_err(|e| {
            let status = match e {
                explain::ExplainError::Unsupported(_) => PcStatus::Unsupported,
                _ => PcStatus::InvalidInput,
            };
            Failure(status, e.to_string())
        })?;
        let e = explainer
            .explain(x)
            .or_else(|e| fail(PcStatus::InvalidInput, e.to_string()))?;
        out[..p].copy_from_slice(&e.contributions);
        *base = e.base_value;
        Ok(())
    })
}

/// Length of a crossed vector for embeddings of dimension `n`: `2n + 2`.
#[no_mangle]
pub extern "C" fn pc_crossed_len(n: usize) -> usize {
    crossing::crossed_len(n)
}

/// Crosses buggy and patched embeddings of dimension `n` into
/// `[patched - buggy | patched * buggy | cosine | euclidean similarity]`.
///
/// # Safety
/// `buggy` and `patched` must hold `n` doubles and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn pc_cross(
    buggy: *const f64,
    patched: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| {
        let need = crossing::crossed_len(n);
        if out_len < need {
            return fail(
                PcStatus::BufferTooSmall,
                format!("need {need} slots, got {out_len}"),
            );
        }
        let b = slice(buggy, n, "buggy")?;
        let p = slice(patched, n, "patched")?;
        let out = slice_mut(out, out_len, "out")?;
        let pair = EmbeddingPair::new("ffi", b.to_vec(), p.to_vec(), "ffi")
            .or_else(|e| fail(PcStatus::InvalidInput, e.to_string()))?;
        let v = crossing::cross(&pair).or_else(|e| fail(PcStatus::InvalidInput, e.to_string()))?;
        out[..need].copy_from_slice(&v.values);
        Ok(())
    })
}

/// Cosine similarity; 0 when either vector is all zeros.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_cosine(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let b = slice(b, n, "b")?;
        *out_ref(out, "out")? =
            embed::cosine(a, b).or_else(|e| fail(PcStatus::InvalidInput, e.to_string()))?;
        Ok(())
    })
}

/// Rank-based ROC AUC; `labels` are 1 (correct) or 0 (incorrect).
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        if let Some(bad) = l.iter().find(|&&v| v > 1) {
            return fail(PcStatus::InvalidInput, format!("label {bad} is not 0 or 1"));
        }
        let pairs: Vec<(f64, u8)> = s.iter().copied().zip(l.iter().copied()).collect();
        *out_ref(out, "out")? =
            eval::auc(&pairs).or_else(|e| fail(PcStatus::InvalidInput, e.to_string()))?;
        Ok(())
    })
}

fn engineered_names() -> &'static [CString] {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES.get_or_init(|| {
        engineered::feature_names()
            .into_iter()
            .map(|n| CString::new(n).expect("feature names have no NUL"))
            .collect()
    })
}

/// Number of engineered features.
#[no_mangle]
pub extern "C" fn pc_engineered_feature_count() -> usize {
    engineered_names().len()
}

/// Static name of engineered feature `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn pc_engineered_feature_name(index: usize) -> *const c_char {
    engineered_names()
        .get(index)
        .map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Engineered features of a single-file unified diff, in registry order.
///
/// # Safety
/// `diff_text` must be NUL-terminated and `out` hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_engineered_features(
    diff_text: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| {
        let need = engineered_names().len();
        if out_len < need {
            return fail(
                PcStatus::BufferTooSmall,
                format!("need {need} slots, got {out_len}"),
            );
        }
        let text = str_arg(diff_text, "diff_text")?;
        let out = slice_mut(out, out_len, "out")?;
        let hunks =
            diffparse::parse_diff(text).or_else(|e| fail(PcStatus::Parse, e.to_string()))?;
        let v = engineered::extract_from_hunks(&hunks);
        out[..need].copy_from_slice(&v.values);
        Ok(())
    })
}
