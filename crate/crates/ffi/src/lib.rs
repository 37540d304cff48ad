//! C ABI over the msnet model and metrics.
//!
//! Every fallible function returns an [`MsnetStatus`]; on failure the
//! message is available from [`msnet_last_error`] on the same thread.
//! Models are opaque handles created by `msnet_model_new` or
//! `msnet_model_load` and released with `msnet_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use msnet::image::Map;
use msnet::metrics::{evaluate_pair, MetricError};
use msnet::model::{checkpoint, FusionMode, Model, ModelConfig, ModelError};
use msnet::tensor::Tensor;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Metric = 6,
    Panic = 7,
}

/// The six per-image scores.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MsnetScores {
    pub dice: f64,
    pub iou: f64,
    pub weighted_fmeasure: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub mae: f64,
}

/// Opaque model handle.
pub struct MsnetModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MsnetStatus, String);

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io(_) => MsnetStatus::Io,
            ModelError::Checkpoint { .. } | ModelError::ParamMismatch(_) => MsnetStatus::Checkpoint,
            ModelError::InvalidConfig(_) => MsnetStatus::InvalidArgument,
            ModelError::InputSize(_) | ModelError::Tensor(_) => MsnetStatus::Shape,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        let status = match e {
            MetricError::ShapeMismatch { .. } => MsnetStatus::Shape,
            _ => MsnetStatus::Metric,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MsnetStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(MsnetStatus::InvalidArgument, msg)
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsnetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MsnetStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_arg<'a>(m: *const MsnetModel) -> Result<&'a Model, Failure> {
    m.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

/// Message of the last failed call on this thread, or NULL after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn msnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn msnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a freshly initialized model. `fusion_add` selects addition
/// instead of subtraction fusion.
///
/// # Safety
/// `out` must be a valid pointer to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_new(
    input_size: usize,
    channels: usize,
    depth: usize,
    fusion_add: bool,
    lossnet_enabled: bool,
    seed: u64,
    out: *mut *mut MsnetModel,
) -> MsnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ModelConfig {
            input_size,
            channels,
            depth,
            fusion: if fusion_add { FusionMode::Add } else { FusionMode::Subtract },
            lossnet_enabled,
            seed,
        };
        let model = Model::new(config)?;
        *out = Box::into_raw(Box::new(MsnetModel { model }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_load(path: *const c_char, out: *mut *mut MsnetModel) -> MsnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MsnetModel { model }));
        Ok(())
    })
}

/// Writes a checkpoint file atomically.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_save(model: *const MsnetModel, path: *const c_char) -> MsnetStatus {
    guard(|| {
        let m = model_arg(model)?;
        checkpoint::save(m, &path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_free(model: *mut MsnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square input side the model expects, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_input_size(model: *const MsnetModel) -> usize {
    model.as_ref().map_or(0, |h| h.model.config().input_size)
}

/// Number of scalar parameters, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_param_count(model: *const MsnetModel) -> usize {
    model.as_ref().map_or(0, |h| h.model.param_count())
}

/// Probability map for one channel-major 3×S×S image (S = input size).
/// Writes S×S probabilities in row-major order to `out`.
///
/// # Safety
/// `image` must hold `image_len` readable values and `out` `out_len`
/// writable values.
#[no_mangle]
pub unsafe extern "C" fn msnet_model_predict(
    model: *const MsnetModel,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MsnetStatus {
    guard(|| {
        let m = model_arg(model)?;
        let s = m.config().input_size;
        let pixels = slice_arg(image, image_len, "image")?;
        if image_len != 3 * s * s {
            return Err(Failure(
                MsnetStatus::Shape,
                format!("image holds {image_len} values, model expects 3x{s}x{s} = {}", 3 * s * s),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != s * s {
            return Err(Failure(
                MsnetStatus::Shape,
                format!("output holds {out_len} values, model produces {s}x{s} = {}", s * s),
            ));
        }
        let x = Tensor::new(&[1, 3, s, s], pixels.to_vec()).map_err(|e| Failure(MsnetStatus::Shape, e.to_string()))?;
        let prob = m.predict(&x)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(prob.data());
        Ok(())
    })
}

/// All six metrics for a height×width prediction in [0, 1] against a
/// binary ground truth. Dice and IoU binarize at `threshold`.
///
/// # Safety
/// `pred` and `gt` must each hold `height·width` readable values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msnet_evaluate(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    threshold: f64,
    out: *mut MsnetScores,
) -> MsnetStatus {
    guard(|| {
        let n = height
            .checked_mul(width)
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid(format!("invalid extent {height}x{width}")))?;
        let p = slice_arg(pred, n, "pred")?;
        let g = slice_arg(gt, n, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = |e: msnet::tensor::TensorError| Failure(MsnetStatus::Shape, e.to_string());
        let p = Map::new(height, width, p.to_vec()).map_err(shape)?;
        let g = Map::new(height, width, g.to_vec()).map_err(shape)?;
        let s = evaluate_pair(&p, &g, threshold)?;
        *out = MsnetScores {
            dice: s.dice,
            iou: s.iou,
            weighted_fmeasure: s.wfm,
            s_measure: s.s_measure,
            e_measure: s.e_measure,
            mae: s.mae,
        };
        Ok(())
    })
}
