//! C ABI over the `tale` library.
//!
//! Every function returns a [`TaleStatus`]. On failure the message is
//! available from [`tale_last_error`] on the same thread until the next
//! call. Handles are opaque and must be released with their `_free`
//! function. Panics are caught at the boundary and reported as
//! `TALE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tale::config::RunConfig;
use tale::dataio::{load_split, SplitDataset};
use tale::evaluation::{evaluate, EvalConfig};
use tale::inference::{load_model, recommend, save_model, Precision, Query};
use tale::solver::Model;
use tale::train::train_model;
use tale::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numerical = 6,
    Vocabulary = 7,
    NotFound = 8,
    Panic = 9,
}

/// A prepared leave-one-out split.
pub struct TaleDataset {
    inner: SplitDataset,
}

/// A trained item-to-item model.
pub struct TaleModel {
    inner: Model,
}

/// Full-catalogue metrics over all evaluated users.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaleMetrics {
    pub users: u64,
    pub hr_at_1: f64,
    pub hr_at_5: f64,
    pub hr_at_10: f64,
    pub ndcg_at_1: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(TaleStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => TaleStatus::Io,
            Error::Parse { .. } | Error::Format(_) | Error::Json(_) => TaleStatus::Format,
            Error::Config(_) | Error::MemoryCap { .. } => TaleStatus::Config,
            Error::Factorization { .. } | Error::Residual { .. } | Error::InvalidWeight { .. } => TaleStatus::Numerical,
            Error::Vocabulary(_) | Error::Dimension(_) => TaleStatus::Vocabulary,
            Error::Protocol(_) => TaleStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TaleStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TaleStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            TaleStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TaleStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TaleStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: checked non-null; the caller guarantees it is writable.
    unsafe { out.write(value) };
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tale_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tale_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a split file written by `tale prepare`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tale_dataset_load(path: *const c_char, out: *mut *mut TaleDataset) -> TaleStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = load_split(path)?;
        write_out(out, Box::into_raw(Box::new(TaleDataset { inner })), "out")
    })
}

/// Reads, filters and splits the raw file named by `input_path` in the
/// TOML configuration.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tale_dataset_prepare(config_toml: *const c_char, out: *mut *mut TaleDataset) -> TaleStatus {
    guard(|| {
        let cfg = RunConfig::from_toml_str(str_arg(config_toml, "config")?)?;
        let inner = tale::cli::prepare_split(&cfg)?;
        write_out(out, Box::into_raw(Box::new(TaleDataset { inner })), "out")
    })
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tale_dataset_num_items(dataset: *const TaleDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.num_items())
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tale_dataset_num_users(dataset: *const TaleDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.num_users())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tale_dataset_free(dataset: *mut TaleDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains on the dataset's training part. `config_toml` may be null for
/// the default configuration; only training keys are used.
///
/// # Safety
/// `dataset` must be a live handle, `config_toml` null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tale_train(
    dataset: *const TaleDataset,
    config_toml: *const c_char,
    out: *mut *mut TaleModel,
) -> TaleStatus {
    guard(|| {
        let dataset = handle(dataset, "dataset")?;
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml_str(str_arg(config_toml, "config")?)?
        };
        let (inner, _) = train_model(&dataset.inner, &cfg.training_config(), &cfg.train_options())?;
        write_out(out, Box::into_raw(Box::new(TaleModel { inner })), "out")
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tale_model_load(path: *const c_char, out: *mut *mut TaleModel) -> TaleStatus {
    guard(|| {
        let inner = load_model(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(TaleModel { inner })), "out")
    })
}

/// Writes the model; `single_precision` stores the weights as f32.
///
/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tale_model_save(model: *const TaleModel, path: *const c_char, single_precision: bool) -> TaleStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let precision = if single_precision { Precision::F32 } else { Precision::F64 };
        save_model(str_arg(path, "path")?, &model.inner, precision)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tale_model_free(model: *mut TaleModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tale_model_num_items(model: *const TaleModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_items())
}

/// Looks up the index of an external item id.
///
/// # Safety
/// `model` must be a live handle, `item_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tale_model_item_index(model: *const TaleModel, item_id: *const c_char, out: *mut u32) -> TaleStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let id = str_arg(item_id, "item_id")?;
        let index = model
            .inner
            .items
            .get(id)
            .ok_or_else(|| Failure(TaleStatus::NotFound, format!("unknown item {id:?}")))?;
        write_out(out, index, "out")
    })
}

/// Copies the external id of `index` into `buf` (NUL-terminated). Fails
/// with `TALE_STATUS_INVALID_ARGUMENT` if `buf_len` is too small.
///
/// # Safety
/// `model` must be a live handle and `buf` writable for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tale_model_item_id(model: *const TaleModel, index: u32, buf: *mut c_char, buf_len: usize) -> TaleStatus {
    guard(|| {
        let model = handle(model, "model")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if index as usize >= model.inner.num_items() {
            return Err(Failure(TaleStatus::NotFound, format!("index {index} out of range")));
        }
        let id = model.inner.items.id(index).as_bytes();
        if id.len() + 1 > buf_len {
            return Err(Failure(TaleStatus::InvalidArgument, format!("buffer needs {} bytes", id.len() + 1)));
        }
        ptr::copy_nonoverlapping(id.as_ptr(), buf.cast::<u8>(), id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// Top-`k` items for a history of item indices, oldest first. Writes up
/// to `k` indices and scores and stores the count in `out_len`.
///
/// # Safety
/// `history` must hold `history_len` values; `out_items` and `out_scores`
/// must be writable for `k` values; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn tale_recommend(
    model: *const TaleModel,
    history: *const u32,
    history_len: usize,
    k: usize,
    exclude_seen: bool,
    out_items: *mut u32,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> TaleStatus {
    guard(|| {
        let model = handle(model, "model")?;
        if history.is_null() && history_len > 0 {
            return Err(null("history"));
        }
        if k == 0 {
            return Err(Failure(TaleStatus::InvalidArgument, "k must be >= 1".into()));
        }
        if out_items.is_null() || out_scores.is_null() {
            return Err(null("output buffer"));
        }
        let items: &[u32] = if history_len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(history, history_len)
        };
        let query = Query {
            history: items.iter().enumerate().map(|(t, &i)| (i, t as i64)).collect(),
            exclude_seen,
        };
        let (ranking, _) = recommend(&model.inner, &query, k)?;
        for (j, s) in ranking.iter().enumerate() {
            *out_items.add(j) = s.item;
            *out_scores.add(j) = s.score;
        }
        write_out(out_len, ranking.len(), "out_len")
    })
}

/// Test-set HR and NDCG at 1, 5 and 10.
///
/// # Safety
/// `model` and `dataset` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tale_evaluate(
    model: *const TaleModel,
    dataset: *const TaleDataset,
    exclude_seen: bool,
    out: *mut TaleMetrics,
) -> TaleStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let dataset = handle(dataset, "dataset")?;
        let cfg = EvalConfig {
            exclude_seen,
            ..EvalConfig::default()
        };
        let report = evaluate(&model.inner, &dataset.inner, &cfg)?;
        let get = |f: fn(&tale::evaluation::EvalReport, &str, usize) -> Option<f64>, k| f(&report, "All", k).unwrap_or(0.0);
        let metrics = TaleMetrics {
            users: report.slice("All").map_or(0, |s| s.users as u64),
            hr_at_1: get(tale::evaluation::EvalReport::hr, 1),
            hr_at_5: get(tale::evaluation::EvalReport::hr, 5),
            hr_at_10: get(tale::evaluation::EvalReport::hr, 10),
            ndcg_at_1: get(tale::evaluation::EvalReport::ndcg, 1),
            ndcg_at_5: get(tale::evaluation::EvalReport::ndcg, 5),
            ndcg_at_10: get(tale::evaluation::EvalReport::ndcg, 10),
        };
        write_out(out, metrics, "out")
    })
}
