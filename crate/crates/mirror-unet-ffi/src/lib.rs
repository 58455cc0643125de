//! C ABI for the mirror-unet framework.
//!
//! Conventions: volumes are dense little-endian `float` buffers in x-fastest
//! order with dimensions `[nx, ny, nz]` and voxel spacing in millimeters.
//! Functions return [`MuStatus`]; on failure `mu_last_error` yields a
//! thread-local message valid until the next failing call on that thread.
//! Model handles are opaque and must be released with `mu_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use mirror_unet::data::{MultimodalSample, Volume};
use mirror_unet::error::Error;
use mirror_unet::inference::WindowSpec;
use mirror_unet::metrics::{dice_score, fp_fn_volumes, Connectivity};
use mirror_unet::model::fuse_logits;
use mirror_unet::tensor::Tensor;
use mirror_unet::training::TrainedModel;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuStatus {
    Ok = 0,
    InvalidArgument = 1,
    IoError = 2,
    RuntimeError = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn fail(status: MuStatus, message: impl Into<String>) -> MuStatus {
    let msg = CString::new(message.into()).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn fail_err(err: &Error) -> MuStatus {
    let status = match err {
        Error::Io(_) | Error::Json(_) => MuStatus::IoError,
        Error::InvalidConfig(_)
        | Error::InvalidValue(_)
        | Error::InvalidStageIndex(_)
        | Error::PatchNotDivisible(_)
        | Error::ShapeMismatch(_) => MuStatus::InvalidArgument,
        _ => MuStatus::RuntimeError,
    };
    fail(status, err.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mu_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque trained-model handle.
pub struct MuModel {
    inner: TrainedModel,
}

unsafe fn cstr_to_path(ptr: *const c_char) -> Result<PathBuf, MuStatus> {
    if ptr.is_null() {
        return Err(fail(MuStatus::InvalidArgument, "null path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(MuStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

unsafe fn read_dims(dims: *const u64) -> Result<(usize, usize, usize), MuStatus> {
    if dims.is_null() {
        return Err(fail(MuStatus::InvalidArgument, "null dims"));
    }
    let d = std::slice::from_raw_parts(dims, 3);
    if d.iter().any(|&v| v == 0) {
        return Err(fail(MuStatus::InvalidArgument, "zero dimension"));
    }
    Ok((d[0] as usize, d[1] as usize, d[2] as usize))
}

unsafe fn read_spacing(spacing: *const f32) -> Result<(f32, f32, f32), MuStatus> {
    if spacing.is_null() {
        return Err(fail(MuStatus::InvalidArgument, "null spacing"));
    }
    let s = std::slice::from_raw_parts(spacing, 3);
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(fail(MuStatus::InvalidArgument, "spacing must be positive"));
    }
    Ok((s[0], s[1], s[2]))
}

unsafe fn volume_from_raw(
    data: *const f32,
    dims: (usize, usize, usize),
    spacing: (f32, f32, f32),
) -> Result<Volume, MuStatus> {
    if data.is_null() {
        return Err(fail(MuStatus::InvalidArgument, "null volume buffer"));
    }
    let n = dims.0 * dims.1 * dims.2;
    let slice = std::slice::from_raw_parts(data, n);
    Volume::from_data(dims, spacing, (0.0, 0.0, 0.0), slice.to_vec()).map_err(|e| fail_err(&e))
}

/// Loads a mirror-model or baseline checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mu_model_load(path: *const c_char, out: *mut *mut MuModel) -> MuStatus {
    if out.is_null() {
        return fail(MuStatus::InvalidArgument, "null output handle");
    }
    let path = match cstr_to_path(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let loaded = (|| -> mirror_unet::error::Result<TrainedModel> {
        let (meta, _) = mirror_unet::model::checkpoint::read_named(&path)?;
        if meta.contains_key("baseline.kind") {
            let (m, _) = mirror_unet::baselines::load_baseline_checkpoint(&path)?;
            Ok(TrainedModel::Baseline(m))
        } else {
            let (m, _) = mirror_unet::model::load_checkpoint(&path)?;
            Ok(TrainedModel::Mirror(m))
        }
    })();
    match loaded {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MuModel { inner }));
            MuStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Releases a model handle. Passing NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer from `mu_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mu_model_free(model: *mut MuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model's training patch shape into `out_dims[3]`.
///
/// # Safety
/// `model` must be a live handle; `out_dims` must point to 3 writable u64.
#[no_mangle]
pub unsafe extern "C" fn mu_model_patch_shape(
    model: *const MuModel,
    out_dims: *mut u64,
) -> MuStatus {
    if model.is_null() || out_dims.is_null() {
        return fail(MuStatus::InvalidArgument, "null argument");
    }
    let patch = match &(*model).inner {
        TrainedModel::Mirror(m) => m.config.in_patch,
        TrainedModel::Baseline(_) => (64, 64, 64),
    };
    let out = std::slice::from_raw_parts_mut(out_dims, 3);
    out[0] = patch.0 as u64;
    out[1] = patch.1 as u64;
    out[2] = patch.2 as u64;
    MuStatus::Ok
}

/// Sliding-window probability prediction over two aligned volumes; writes
/// `nx*ny*nz` probabilities into `out_probs` (the final fused map for v4,
/// the primary-branch map otherwise).
///
/// # Safety
/// All pointers must reference buffers of the documented sizes.
#[no_mangle]
pub unsafe extern "C" fn mu_model_predict(
    model: *const MuModel,
    volume_a: *const f32,
    volume_b: *const f32,
    dims: *const u64,
    spacing: *const f32,
    overlap: f64,
    out_probs: *mut f32,
) -> MuStatus {
    if model.is_null() || out_probs.is_null() {
        return fail(MuStatus::InvalidArgument, "null argument");
    }
    let dims = match read_dims(dims) {
        Ok(d) => d,
        Err(s) => return s,
    };
    let spacing = match read_spacing(spacing) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let a = match volume_from_raw(volume_a, dims, spacing) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let b = match volume_from_raw(volume_b, dims, spacing) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let result = (|| -> mirror_unet::error::Result<Volume> {
        let zeros = {
            let mut z = Volume::new(dims, spacing)?;
            z.set_origin(a.origin());
            z
        };
        let sample = MultimodalSample::new(a, b, zeros)?;
        let model = &(*model).inner;
        let patch = match model {
            TrainedModel::Mirror(m) => m.config.in_patch,
            TrainedModel::Baseline(_) => (64, 64, 64),
        };
        let window = WindowSpec::new(patch, overlap)?;
        let probs = model.predict_probs(&sample, &window)?;
        Ok(probs.into_iter().next().expect("at least one output"))
    })();
    match result {
        Ok(vol) => {
            let out = std::slice::from_raw_parts_mut(out_probs, vol.numel());
            out.copy_from_slice(vol.data());
            MuStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Dice score of two binary masks (values 0 or 1); both masks empty gives
/// 1.0.
///
/// # Safety
/// `pred`/`gt` must hold `nx*ny*nz` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mu_dice(
    pred: *const f32,
    gt: *const f32,
    dims: *const u64,
    out: *mut f64,
) -> MuStatus {
    if out.is_null() {
        return fail(MuStatus::InvalidArgument, "null output");
    }
    let dims = match read_dims(dims) {
        Ok(d) => d,
        Err(s) => return s,
    };
    let spacing = (1.0, 1.0, 1.0);
    let p = match volume_from_raw(pred, dims, spacing) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let g = match volume_from_raw(gt, dims, spacing) {
        Ok(v) => v,
        Err(s) => return s,
    };
    match dice_score(&p, &g) {
        Ok(d) => {
            *out = d;
            MuStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Lesion-wise false-positive / false-negative volumes in milliliters
/// (26-connectivity components).
///
/// # Safety
/// Buffers sized as in [`mu_dice`]; spacing holds 3 positive floats.
#[no_mangle]
pub unsafe extern "C" fn mu_fp_fn_volumes(
    pred: *const f32,
    gt: *const f32,
    dims: *const u64,
    spacing: *const f32,
    out_fpv_ml: *mut f64,
    out_fnv_ml: *mut f64,
) -> MuStatus {
    if out_fpv_ml.is_null() || out_fnv_ml.is_null() {
        return fail(MuStatus::InvalidArgument, "null output");
    }
    let dims = match read_dims(dims) {
        Ok(d) => d,
        Err(s) => return s,
    };
    let spacing = match read_spacing(spacing) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let p = match volume_from_raw(pred, dims, spacing) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let g = match volume_from_raw(gt, dims, spacing) {
        Ok(v) => v,
        Err(s) => return s,
    };
    match fp_fn_volumes(&p, &g, Connectivity::TwentySix) {
        Ok((fpv, fnv)) => {
            *out_fpv_ml = fpv;
            *out_fnv_ml = fnv;
            MuStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Weighted logit fusion: out = (1 - theta) * pet + theta * ct.
///
/// # Safety
/// All buffers must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn mu_fuse_logits(
    ct: *const f32,
    pet: *const f32,
    len: u64,
    theta: f32,
    out: *mut f32,
) -> MuStatus {
    if ct.is_null() || pet.is_null() || out.is_null() {
        return fail(MuStatus::InvalidArgument, "null buffer");
    }
    if !(0.0..=1.0).contains(&theta) {
        return fail(MuStatus::InvalidArgument, "theta outside [0,1]");
    }
    let n = len as usize;
    let ct_t = Tensor::from_vec(&[1, 1, 1, n], std::slice::from_raw_parts(ct, n).to_vec());
    let pet_t = Tensor::from_vec(&[1, 1, 1, n], std::slice::from_raw_parts(pet, n).to_vec());
    match fuse_logits(&ct_t, &pet_t, theta) {
        Ok(fused) => {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(fused.data());
            MuStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Generates a PET/CT phantom with `lesion_count` lesions into three caller
/// buffers of `nx*ny*nz` floats each (CT, PET, lesion mask). Deterministic
/// in `seed`.
///
/// # Safety
/// Output buffers must each hold `nx*ny*nz` floats.
#[no_mangle]
pub unsafe extern "C" fn mu_phantom(
    dims: *const u64,
    spacing: *const f32,
    lesion_count: u32,
    seed: u64,
    out_ct: *mut f32,
    out_pet: *mut f32,
    out_mask: *mut f32,
) -> MuStatus {
    if out_ct.is_null() || out_pet.is_null() || out_mask.is_null() {
        return fail(MuStatus::InvalidArgument, "null output buffer");
    }
    let dims = match read_dims(dims) {
        Ok(d) => d,
        Err(s) => return s,
    };
    let spacing = match read_spacing(spacing) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let spec = mirror_unet::data::phantom::PhantomSpec {
        shape: dims,
        spacing,
        lesion_count: lesion_count as usize,
        seed,
        ..mirror_unet::data::phantom::PhantomSpec::default()
    };
    match mirror_unet::data::phantom::generate_phantom(&spec) {
        Ok(sample) => {
            let n = sample.x_a.numel();
            std::slice::from_raw_parts_mut(out_ct, n).copy_from_slice(sample.x_a.data());
            std::slice::from_raw_parts_mut(out_pet, n).copy_from_slice(sample.x_b.data());
            std::slice::from_raw_parts_mut(out_mask, n).copy_from_slice(sample.y.data());
            MuStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}
