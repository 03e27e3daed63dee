//! C ABI over the `protab` library.
//!
//! Every function returns a [`ProtabStatus`]. On failure the message is kept
//! per thread and can be read with [`protab_last_error`]. Datasets and models
//! are opaque handles owned by the caller and released with their `_free`
//! function. Panics never cross the boundary; they surface as
//! `PROTAB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::{Array2, ArrayView1};

use protab::data::{apply_preprocess, load_preset, PreprocessState, TabularDataset};
use protab::eval::{evaluate, wilcoxon_signed_rank};
use protab::losses::orthogonalization_loss;
use protab::nn::{load_checkpoint, save_checkpoint, Batch, ModelBundle};
use protab::ot::{sinkhorn, singleton_ot, SinkhornConfig};
use protab::pspace::{choose_k, LogBase};
use protab::train::{run_pipeline, NoopObserver, TrainConfig};
use protab::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Model = 5,
    Training = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// A loaded, unprocessed dataset.
pub struct ProtabDataset {
    inner: TabularDataset,
}

/// A trained model, plus the preprocessing fitted on its training split when
/// it was trained through this interface.
pub struct ProtabModel {
    model: ModelBundle,
    preprocess: Option<PreprocessState>,
}

/// Test scores of a training run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ProtabTrainSummary {
    /// Test metric of the phase-1 model (accuracy or RMSE).
    pub baseline_test: f64,
    /// Test metric of the returned model.
    pub test: f64,
    /// 1 when higher values are better (accuracy), 0 for RMSE.
    pub higher_is_better: i32,
    pub num_prototypes: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ProtabWilcoxon {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub exact: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ProtabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Data(_) => ProtabStatus::Data,
            Error::Model(_) | Error::Serde(_) => ProtabStatus::Model,
            Error::Train(_) | Error::KMeans(_) | Error::Loss(_) => ProtabStatus::Training,
            Error::Ot(_) | Error::Eval(_) => ProtabStatus::Numeric,
            Error::Io { .. } | Error::Report(_) => ProtabStatus::Io,
            Error::Config(_) => ProtabStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ProtabStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(ProtabStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ProtabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ProtabStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ProtabStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn protab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn protab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a registered preset (e.g. "AD", "CA", "synthetic") from `data_dir`.
///
/// # Safety
/// `name` and `data_dir` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_dataset_load_preset(
    name: *const c_char,
    data_dir: *const c_char,
    out: *mut *mut ProtabDataset,
) -> ProtabStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let dir = str_arg(data_dir, "data_dir")?;
        let out = out_arg(out, "out")?;
        let (_, inner) = load_preset(name, dir).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(ProtabDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn protab_dataset_free(dataset: *mut ProtabDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_dataset_shape(
    dataset: *const ProtabDataset,
    rows: *mut usize,
    features: *mut usize,
) -> ProtabStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out_arg(rows, "rows")? = ds.inner.n_rows();
        *out_arg(features, "features")? = ds.inner.n_features();
        Ok(())
    })
}

/// Runs the full two-phase pipeline. `config_toml` may be null for defaults;
/// `summary` may be null.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_train(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut ProtabModel,
    summary: *mut ProtabTrainSummary,
) -> ProtabStatus {
    guard(|| {
        let config = if config_toml.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::from_toml_str(str_arg(config_toml, "config_toml")?)?
        };
        let out = out_arg(out, "out")?;
        let result = run_pipeline(&config, seed, &mut NoopObserver)?;
        if let Some(s) = summary.as_mut() {
            *s = ProtabTrainSummary {
                baseline_test: result.report.baseline_test.value,
                test: result.report.test.value,
                higher_is_better: result.report.test.metric.higher_is_better() as i32,
                num_prototypes: result.report.k,
            };
        }
        let handle = ProtabModel { model: result.model, preprocess: Some(result.data.preprocess) };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Loads a checkpoint. Such models expect already-preprocessed datasets.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_model_load(path: *const c_char, out: *mut *mut ProtabModel) -> ProtabStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let model = load_checkpoint(&path)?;
        *out = Box::into_raw(Box::new(ProtabModel { model, preprocess: None }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn protab_model_save(model: *const ProtabModel, path: *const c_char) -> ProtabStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        save_checkpoint(&m.model, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn protab_model_free(model: *mut ProtabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of outputs per row (1 for binary and regression, classes otherwise).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_model_output_dim(model: *const ProtabModel, out: *mut usize) -> ProtabStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.model.output_dim;
        Ok(())
    })
}

fn prepared(m: &ProtabModel, ds: &TabularDataset) -> Result<TabularDataset, Failure> {
    match &m.preprocess {
        Some(state) => Ok(apply_preprocess(state, ds).map_err(Error::from)?),
        None => Ok(ds.clone()),
    }
}

/// Raw model outputs (logits or normalized regression values), row-major
/// `rows x output_dim`, written to `out` of capacity `capacity`. `written`
/// receives the number of values required even when the buffer is too small.
///
/// # Safety
/// Handles must be live; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn protab_model_predict(
    model: *const ProtabModel,
    dataset: *const ProtabDataset,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> ProtabStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let written = out_arg(written, "written")?;
        let data = prepared(m, &ds.inner)?;
        let pred = m.model.predict(&Batch::from_dataset(&data)).map_err(Error::from)?;
        *written = pred.len();
        if capacity < pred.len() {
            return Err(Failure(ProtabStatus::BufferTooSmall, format!("need {} values, got {capacity}", pred.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, pred.len());
        for (d, s) in dst.iter_mut().zip(pred.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Accuracy or RMSE of `model` on every row of `dataset`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_model_evaluate(
    model: *const ProtabModel,
    dataset: *const ProtabDataset,
    out: *mut f64,
) -> ProtabStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out_arg(out, "out")?;
        *out = evaluate(&m.model, &prepared(m, &ds.inner)?)?.value;
        Ok(())
    })
}

/// Transport cost from one point to prototypes with simplex weights `r`.
///
/// # Safety
/// `r` and `cost` must hold `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_singleton_ot(r: *const f64, cost: *const f64, k: usize, out: *mut f64) -> ProtabStatus {
    guard(|| {
        let r = slice_arg(r, k, "r")?;
        let c = slice_arg(cost, k, "cost")?;
        let out = out_arg(out, "out")?;
        *out = singleton_ot(ArrayView1::from(r), ArrayView1::from(c)).map_err(Error::from)?;
        Ok(())
    })
}

/// Entropic transport between `a` (length n) and `b` (length m) under the
/// row-major `n x m` cost. `plan` may be null; otherwise it receives n*m values.
///
/// # Safety
/// Buffers must have the stated lengths; `out_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_sinkhorn(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    cost: *const f64,
    reg: f64,
    max_iter: usize,
    tol: f64,
    plan: *mut f64,
    out_cost: *mut f64,
) -> ProtabStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, m, "b")?;
        let c = slice_arg(cost, n * m, "cost")?;
        let out_cost = out_arg(out_cost, "out_cost")?;
        let cost = Array2::from_shape_vec((n, m), c.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let cfg = SinkhornConfig { reg, max_iter, tol, log_domain: None };
        let res = sinkhorn(ArrayView1::from(a), ArrayView1::from(b), &cost, &cfg).map_err(Error::from)?;
        *out_cost = res.cost;
        if !plan.is_null() {
            let dst = std::slice::from_raw_parts_mut(plan, n * m);
            for (d, s) in dst.iter_mut().zip(res.plan.iter()) {
                *d = *s;
            }
        }
        Ok(())
    })
}

/// Orthogonality penalty of the row-major `k x d` prototype matrix; the
/// gradient is written to `grad` (k*d values) unless it is null.
///
/// # Safety
/// `prototypes` must hold k*d doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_orthogonalization_loss(
    prototypes: *const f64,
    k: usize,
    d: usize,
    out: *mut f64,
    grad: *mut f64,
) -> ProtabStatus {
    guard(|| {
        let p = slice_arg(prototypes, k * d, "prototypes")?;
        let out = out_arg(out, "out")?;
        let b = Array2::from_shape_vec((k, d), p.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let (value, g) = orthogonalization_loss(&b).map_err(Error::from)?;
        *out = value;
        if !grad.is_null() {
            let dst = std::slice::from_raw_parts_mut(grad, k * d);
            for (d, s) in dst.iter_mut().zip(g.iter()) {
                *d = *s;
            }
        }
        Ok(())
    })
}

/// Default number of prototypes for `num_features` input columns.
#[no_mangle]
pub extern "C" fn protab_choose_k(num_features: usize) -> usize {
    choose_k(num_features, LogBase::Natural)
}

/// Two-sided paired Wilcoxon signed-rank test.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn protab_wilcoxon(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut ProtabWilcoxon,
) -> ProtabStatus {
    guard(|| {
        let x = slice_arg(x, n, "x")?;
        let y = slice_arg(y, n, "y")?;
        let out = out_arg(out, "out")?;
        let r = wilcoxon_signed_rank(x, y).map_err(Error::from)?;
        *out = ProtabWilcoxon { n: r.n, statistic: r.statistic, p_value: r.p_value, exact: r.exact as i32 };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_are_recorded_per_thread() {
        let mut out = 0.0;
        let st = unsafe { protab_singleton_ot(std::ptr::null(), std::ptr::null(), 2, &mut out) };
        assert_eq!(st, ProtabStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(protab_last_error()) }.to_str().unwrap().to_string();
        assert!(msg.contains("r is null"), "{msg}");
        let r = [0.25, 0.75];
        let c = [1.0, 2.0];
        assert_eq!(unsafe { protab_singleton_ot(r.as_ptr(), c.as_ptr(), 2, &mut out) }, ProtabStatus::Ok);
        assert_eq!(out, 1.75);
        assert!(protab_last_error().is_null());
    }

    #[test]
    fn off_simplex_is_numeric_error() {
        let r = [0.5, 0.7];
        let c = [1.0, 2.0];
        let mut out = 0.0;
        assert_eq!(unsafe { protab_singleton_ot(r.as_ptr(), c.as_ptr(), 2, &mut out) }, ProtabStatus::Numeric);
    }
}
