//! C ABI over the completion model and the point-cloud metrics.
//!
//! Every function returns a [`PgnetStatus`]; on failure a message is kept
//! per thread and can be read with [`pgnet_last_error`]. Models are opaque
//! handles released with [`pgnet_model_free`]. Point buffers are row-major
//! `n x 3` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pgnet::autodiff::ParamStore;
use pgnet::geom::{chamfer_l1, fscore, PointCloud};
use pgnet::pipeline::{ModelConfig, PgNet, RunConfig, BEST_CKPT, CONFIG_FILE, FINAL_CKPT};
use pgnet::Error;

/// Result codes. Input, state and numerical errors share their values with
/// the command line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgnetStatus {
    Ok = 0,
    InvalidInput = 2,
    StateMismatch = 3,
    Numerical = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle: module tree plus parameters.
pub struct PgnetModel {
    model: PgNet,
    store: ParamStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn from_error(e: Error) -> PgnetStatus {
    let status = match e.exit_code() {
        3 => PgnetStatus::StateMismatch,
        4 => PgnetStatus::Numerical,
        _ => PgnetStatus::InvalidInput,
    };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), PgnetStatus>) -> PgnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PgnetStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PgnetStatus::Panic
        }
    }
}

fn null(what: &str) -> PgnetStatus {
    set_error(format!("{what} is null"));
    PgnetStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PgnetStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        PgnetStatus::InvalidInput
    })
}

unsafe fn cloud_arg(p: *const f64, n: usize, what: &str) -> Result<PointCloud, PgnetStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let flat = std::slice::from_raw_parts(p, n.checked_mul(3).ok_or(PgnetStatus::InvalidInput)?);
    PointCloud::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()).map_err(from_error)
}

fn boxed(model: PgNet, store: ParamStore, out: *mut *mut PgnetModel) {
    // SAFETY: callers check `out` for null before building the model.
    unsafe { *out = Box::into_raw(Box::new(PgnetModel { model, store })) };
}

/// Loads a training run directory (`config.json` plus `best.ckpt`, or
/// `final.ckpt` when `use_final` is non-zero).
///
/// # Safety
/// `run_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgnet_model_load(
    run_dir: *const c_char,
    use_final: i32,
    out: *mut *mut PgnetModel,
) -> PgnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = Path::new(str_arg(run_dir, "run_dir")?);
        let cfg = RunConfig::load(&dir.join(CONFIG_FILE)).map_err(from_error)?;
        let ckpt = if use_final != 0 { FINAL_CKPT } else { BEST_CKPT };
        let store = ParamStore::load(&dir.join(ckpt)).map_err(from_error)?;
        let model = PgNet::attach(&cfg.model, &store).map_err(from_error)?;
        boxed(model, store, out);
        Ok(())
    })
}

/// Builds a freshly initialised model from a JSON model configuration
/// (an empty string selects the defaults).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgnet_model_init(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut PgnetModel,
) -> PgnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_json, "config_json")?;
        let cfg: ModelConfig = if text.trim().is_empty() {
            ModelConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| from_error(e.into()))?
        };
        let (store, model) = PgNet::init(&cfg, seed).map_err(from_error)?;
        boxed(model, store, out);
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pgnet_model_free(model: *mut PgnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of points the model outputs at its finest level.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgnet_model_output_points(model: *const PgnetModel, out: *mut usize) -> PgnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.cfg.output_points();
        Ok(())
    })
}

/// Completes a partial cloud using a prior cloud. Writes the finest level
/// into `out` (capacity `out_capacity` points) and its size into
/// `out_points`; when the buffer is too small only `out_points` is set.
///
/// # Safety
/// Point buffers must hold `3 * n` doubles; `out` must hold
/// `3 * out_capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pgnet_model_complete(
    model: *const PgnetModel,
    partial: *const f64,
    n_partial: usize,
    prior: *const f64,
    n_prior: usize,
    out: *mut f64,
    out_capacity: usize,
    out_points: *mut usize,
) -> PgnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() || out_points.is_null() {
            return Err(null("out"));
        }
        let partial = cloud_arg(partial, n_partial, "partial")?;
        let prior = cloud_arg(prior, n_prior, "prior")?;
        let levels = m.model.predict(&m.store, &partial, &prior).map_err(from_error)?;
        let last = levels.last().expect("scaffold level");
        *out_points = last.len();
        if last.len() > out_capacity {
            set_error(format!(
                "output needs {} points, buffer holds {out_capacity}",
                last.len()
            ));
            return Err(PgnetStatus::BufferTooSmall);
        }
        let dst = std::slice::from_raw_parts_mut(out, last.len() * 3);
        for (d, p) in dst.chunks_exact_mut(3).zip(last.points()) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Symmetric L1 Chamfer distance.
///
/// # Safety
/// `a` and `b` must hold `3 * na` and `3 * nb` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgnet_chamfer_l1(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> PgnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = (cloud_arg(a, na, "a")?, cloud_arg(b, nb, "b")?);
        *out = chamfer_l1(&a, &b);
        Ok(())
    })
}

/// F-score of `pred` against `gt` at distance threshold `tau`.
///
/// # Safety
/// `pred` and `gt` must hold `3 * n` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgnet_fscore(
    pred: *const f64,
    n_pred: usize,
    gt: *const f64,
    n_gt: usize,
    tau: f64,
    out: *mut f64,
) -> PgnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, g) = (cloud_arg(pred, n_pred, "pred")?, cloud_arg(gt, n_gt, "gt")?);
        *out = fscore(&p, &g, tau).map_err(from_error)?.f;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn pgnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pgnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
