//! C ABI over `meal-core`.
//!
//! Every fallible function returns a [`MealStatus`]; on failure the message is
//! kept per thread and read with [`meal_last_error_message`]. Models and
//! ensembles are opaque handles released with their `_free` function.
//! Arrays are row-major `double` buffers; image batches are NHWC with three
//! channels, already normalized.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use meal::checkpoint::{CheckpointBundle, CheckpointKind};
use meal::data::Normalization;
use meal::ensemble::{Ensemble, Preprocessing};
use meal::losses::{bce_loss, ce_loss_with_grad, kl_loss_with_grad};
use meal::nets::{build_model, CapacityTier, Model, ModelSpec};
use meal::tensor::{LogitBatch, ProbBatch};
use meal::transfer::multilabel_sigmoid_ce_with_grad;
use meal::Error;
use ndarray::{Array2, Array4, ArrayView1};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MealStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Numerical = 5,
    Label = 6,
    Empty = 7,
    Checkpoint = 8,
    MissingFile = 9,
    Io = 10,
    Serde = 11,
    Panic = 12,
}

/// Opaque network handle.
pub struct MealModel {
    model: Model,
}

/// Opaque teacher-ensemble handle.
pub struct MealEnsemble {
    ensemble: Ensemble,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MealStatus {
    match e {
        Error::Config(_) => MealStatus::Config,
        Error::Shape(_) => MealStatus::Shape,
        Error::Numerical(_) => MealStatus::Numerical,
        Error::Label(_) => MealStatus::Label,
        Error::Empty(_) => MealStatus::Empty,
        Error::Checkpoint(_) => MealStatus::Checkpoint,
        Error::MissingFile(_) => MealStatus::MissingFile,
        Error::Io { .. } => MealStatus::Io,
        Error::Serde(_) => MealStatus::Serde,
    }
}

enum Failure {
    Status(MealStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(MealStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(MealStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MealStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MealStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            MealStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(invalid(format!("{what} holds {len} values, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn image_batch(images: *const f64, n: usize, h: usize, w: usize, c: usize) -> Result<Array4<f64>, Failure> {
    let data = slice_arg(images, n * h * w * c, "images")?;
    Array4::from_shape_vec((n, h, w, c), data.to_vec()).map_err(|e| invalid(e.to_string()))
}

unsafe fn matrix(p: *const f64, n: usize, c: usize, what: &str) -> Result<Array2<f64>, Failure> {
    let data = slice_arg(p, n * c, what)?;
    Array2::from_shape_vec((n, c), data.to_vec()).map_err(|e| invalid(e.to_string()))
}

fn copy_out(dst: &mut [f64], src: &Array2<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *s;
    }
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn meal_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a freshly initialized network. `tier` is one of `teacher-large`,
/// `teacher-medium`, `student-small`, `student-tiny`.
///
/// # Safety
/// `tier` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meal_model_build(
    tier: *const c_char,
    num_classes: usize,
    resolution: usize,
    seed: u64,
    out: *mut *mut MealModel,
) -> MealStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let tier: CapacityTier = str_arg(tier, "tier")?.parse()?;
        let model = build_model(&ModelSpec::new(tier, num_classes, resolution), seed)?;
        *out = Box::into_raw(Box::new(MealModel { model }));
        Ok(())
    })
}

/// Loads a network from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meal_model_load(path: *const c_char, out: *mut *mut MealModel) -> MealStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let model = CheckpointBundle::load(&path)?.to_model()?;
        *out = Box::into_raw(Box::new(MealModel { model }));
        Ok(())
    })
}

/// Writes the network's weights as a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn meal_model_save(model: *const MealModel, path: *const c_char) -> MealStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        CheckpointBundle::from_model(&m.model, CheckpointKind::Init, String::new(), 0).save(&path)?;
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn meal_model_free(model: *mut MealModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn meal_model_num_classes(model: *const MealModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_classes())
}

/// Expected input side length, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn meal_model_resolution(model: *const MealModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.spec().input_resolution)
}

/// Inference logits for `n` images of `resolution x resolution x 3`;
/// writes `n * num_classes` values.
///
/// # Safety
/// `images` must hold `n * resolution * resolution * 3` values; `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn meal_model_forward(
    model: *const MealModel,
    images: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> MealStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let r = m.model.spec().input_resolution;
        let batch = image_batch(images, n, r, r, 3)?;
        let logits = m.model.forward_logits(&batch)?;
        let dst = out_slice(out, out_len, n * m.model.num_classes(), "out")?;
        copy_out(dst, logits.as_array());
        Ok(())
    })
}

/// Builds an ensemble from copies of `k` models sharing classes and resolution.
///
/// # Safety
/// `models` must point to `k` valid model handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meal_ensemble_new(models: *const *const MealModel, k: usize, out: *mut *mut MealEnsemble) -> MealStatus {
    guard(|| {
        if models.is_null() {
            return Err(null("models"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let handles = std::slice::from_raw_parts(models, k);
        let mut teachers = Vec::with_capacity(k);
        for (i, &h) in handles.iter().enumerate() {
            teachers.push(h.as_ref().ok_or_else(|| null(&format!("models[{i}]")))?.model.clone());
        }
        let resolution = teachers.first().map_or(0, |t| t.spec().input_resolution);
        let pre = Preprocessing {
            input_resolution: resolution,
            normalization: Normalization::CIFAR10,
        };
        let ensemble = Ensemble::new(teachers, pre)?;
        *out = Box::into_raw(Box::new(MealEnsemble { ensemble }));
        Ok(())
    })
}

/// Releases an ensemble handle. Null is ignored.
///
/// # Safety
/// `ensemble` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn meal_ensemble_free(ensemble: *mut MealEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Averaged teacher probabilities for `n` images; writes `n * num_classes` values.
///
/// # Safety
/// `images` must hold `n * resolution * resolution * 3` values; `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn meal_ensemble_predict(
    ensemble: *const MealEnsemble,
    images: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> MealStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        let r = e.ensemble.preprocessing().input_resolution;
        let batch = image_batch(images, n, r, r, 3)?;
        let probs = e.ensemble.predict(&batch)?;
        let dst = out_slice(out, out_len, n * e.ensemble.num_classes(), "out")?;
        copy_out(dst, probs.as_array());
        Ok(())
    })
}

type SoftLoss = fn(&ProbBatch, &LogitBatch) -> meal::Result<(meal::losses::LossValue, Array2<f64>)>;

unsafe fn soft_loss(
    f: SoftLoss,
    teacher_probs: *const f64,
    student_logits: *const f64,
    n: usize,
    c: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MealStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let p = ProbBatch::new(matrix(teacher_probs, n, c, "teacher_probs")?)?;
        let z = LogitBatch::new(matrix(student_logits, n, c, "student_logits")?)?;
        let (loss, grad) = f(&p, &z)?;
        *out_value = loss.value;
        if !out_grad.is_null() {
            copy_out(std::slice::from_raw_parts_mut(out_grad, n * c), &grad);
        }
        Ok(())
    })
}

/// Mean KL(teacher || softmax(student)) over `n` rows of `c` classes. When
/// `out_grad` is non-null it receives the `n * c` gradient w.r.t. the logits.
///
/// # Safety
/// Inputs must hold `n * c` values; `out_grad` must be null or hold `n * c`.
#[no_mangle]
pub unsafe extern "C" fn meal_kl_loss(
    teacher_probs: *const f64,
    student_logits: *const f64,
    n: usize,
    c: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MealStatus {
    soft_loss(kl_loss_with_grad, teacher_probs, student_logits, n, c, out_value, out_grad)
}

/// Mean soft-label cross-entropy; same conventions as [`meal_kl_loss`].
///
/// # Safety
/// Inputs must hold `n * c` values; `out_grad` must be null or hold `n * c`.
#[no_mangle]
pub unsafe extern "C" fn meal_ce_loss(
    teacher_probs: *const f64,
    student_logits: *const f64,
    n: usize,
    c: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MealStatus {
    soft_loss(ce_loss_with_grad, teacher_probs, student_logits, n, c, out_value, out_grad)
}

/// Mean binary cross-entropy of `n` probabilities against 0/1 labels.
///
/// # Safety
/// `labels` and `probs` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn meal_bce_loss(labels: *const f64, probs: *const f64, n: usize, out_value: *mut f64) -> MealStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let y = ArrayView1::from(slice_arg(labels, n, "labels")?);
        let p = ArrayView1::from(slice_arg(probs, n, "probs")?);
        *out_value = bce_loss(y, p)?.value;
        Ok(())
    })
}

/// Mean per-class sigmoid cross-entropy for multi-label targets.
///
/// # Safety
/// Inputs must hold `n * c` values; `out_grad` must be null or hold `n * c`.
#[no_mangle]
pub unsafe extern "C" fn meal_multilabel_sigmoid_ce(
    targets: *const f64,
    logits: *const f64,
    n: usize,
    c: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MealStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let t = matrix(targets, n, c, "targets")?;
        let z = LogitBatch::new(matrix(logits, n, c, "logits")?)?;
        let (loss, grad) = multilabel_sigmoid_ce_with_grad(&t, &z)?;
        *out_value = loss.value;
        if !out_grad.is_null() {
            copy_out(std::slice::from_raw_parts_mut(out_grad, n * c), &grad);
        }
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn meal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
