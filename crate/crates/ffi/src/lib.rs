//! C interface to egokit.
//!
//! Objects are opaque handles created by `*_load` / `*_new` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`EgokitStatus`]; on failure, `egokit_last_error_message` describes the
//! most recent error on the calling thread.
//!
//! Poses cross the boundary as 12 doubles each: the rotation matrix in
//! row-major order followed by the translation.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use egokit::body::{self, NUM_JOINTS};
use egokit::conditioning::{self, ConditioningVariant};
use egokit::geometry::PoseSE3;
use egokit::motionprior::{checkpoint, MotionPrior};
use egokit::pipeline::{self, Estimate, EstimateConfig, EstimateInput};
use egokit::scene::{self, FloorConfig, SparsePointCloud};
use egokit::Error;
use nalgebra::Vector3;

pub const EGOKIT_POSE_STRIDE: usize = 12;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgokitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Degenerate = 3,
    ShapeMismatch = 4,
    InsufficientData = 5,
    NonFinite = 6,
    Parse = 7,
    Io = 8,
    Config = 9,
    Diverged = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for EgokitStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => EgokitStatus::InvalidInput,
            Error::Degenerate(_) => EgokitStatus::Degenerate,
            Error::ShapeMismatch(_) => EgokitStatus::ShapeMismatch,
            Error::InsufficientData(_) => EgokitStatus::InsufficientData,
            Error::NonFinite(_) => EgokitStatus::NonFinite,
            Error::Parse { .. } => EgokitStatus::Parse,
            Error::Io { .. } => EgokitStatus::Io,
            Error::Config(_) => EgokitStatus::Config,
            Error::Diverged(_) => EgokitStatus::Diverged,
        }
    }
}

/// A trained motion prior.
pub struct EgokitPrior {
    prior: MotionPrior,
}

/// The result of one estimation.
pub struct EgokitEstimate {
    estimate: Estimate,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: EgokitStatus, msg: impl Into<String>) -> EgokitStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), EgokitStatus>) -> EgokitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EgokitStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(EgokitStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: egokit::Result<T>) -> Result<T, EgokitStatus> {
    r.map_err(|e| fail(EgokitStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), EgokitStatus> {
    if p.is_null() {
        Err(fail(EgokitStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_poses(poses: *const f64, len: usize) -> Result<Vec<PoseSE3>, EgokitStatus> {
    non_null(poses, "poses")?;
    if len == 0 {
        return Err(fail(EgokitStatus::InvalidInput, "trajectory is empty"));
    }
    let raw = std::slice::from_raw_parts(poses, len * EGOKIT_POSE_STRIDE);
    lift(raw.chunks(EGOKIT_POSE_STRIDE).map(PoseSE3::from_slice).collect())
}

unsafe fn write_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), EgokitStatus> {
    non_null(out, "out")?;
    if capacity < values.len() {
        return Err(fail(EgokitStatus::BufferTooSmall, format!("need {} doubles, buffer holds {capacity}", values.len())));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn egokit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn egokit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of joints reported per frame by `egokit_estimate_joint_positions`.
#[no_mangle]
pub extern "C" fn egokit_joint_count() -> usize {
    NUM_JOINTS
}

/// Conditioning features per timestep for a variant tag, or 0 for an
/// unknown tag.
#[no_mangle]
pub extern "C" fn egokit_feature_dim(variant: u32) -> usize {
    ConditioningVariant::from_tag(variant).map_or(0, |v| v.feature_dim())
}

/// Encodes `len` CPF poses with conditioning variant `variant` into `out`
/// (`len × egokit_feature_dim(variant)` doubles).
///
/// # Safety
/// `poses` must hold `12 · len` doubles and `out` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn egokit_encode_conditioning(
    variant: u32,
    poses: *const f64,
    len: usize,
    out: *mut f64,
    capacity: usize,
) -> EgokitStatus {
    guard(|| {
        let v = ConditioningVariant::from_tag(variant).ok_or_else(|| fail(EgokitStatus::InvalidInput, format!("unknown variant tag {variant}")))?;
        let traj = read_poses(poses, len)?;
        write_out(&lift(conditioning::encode_flat(v, &traj))?, out, capacity)
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egokit_prior_load(path: *const c_char, out: *mut *mut EgokitPrior) -> EgokitStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path).to_str().map_err(|_| fail(EgokitStatus::InvalidInput, "path is not UTF-8"))?;
        let prior = lift(checkpoint::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(EgokitPrior { prior }));
        Ok(())
    })
}

/// Conditioning variant tag of a loaded prior.
///
/// # Safety
/// `prior` must come from `egokit_prior_load`.
#[no_mangle]
pub unsafe extern "C" fn egokit_prior_variant(prior: *const EgokitPrior) -> u32 {
    if prior.is_null() {
        return u32::MAX;
    }
    (*prior).prior.variant.tag()
}

/// # Safety
/// `prior` must be null or come from `egokit_prior_load`, and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn egokit_prior_free(prior: *mut EgokitPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Samples a body for `len` world-frame CPF poses with `steps` DDIM steps
/// (0 selects the default) and the given seed, without guidance.
///
/// # Safety
/// `prior` must come from `egokit_prior_load`; `poses` must hold `12 · len`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate(
    prior: *const EgokitPrior,
    poses: *const f64,
    len: usize,
    steps: u32,
    seed: u64,
    out: *mut *mut EgokitEstimate,
) -> EgokitStatus {
    guard(|| {
        non_null(prior, "prior")?;
        non_null(out, "out")?;
        let cpf = read_poses(poses, len)?;
        let config = EstimateConfig {
            ddim_steps: if steps == 0 { pipeline::DEFAULT_DDIM_STEPS } else { steps as usize },
            seed,
            ..EstimateConfig::default()
        };
        let estimate = lift(pipeline::estimate(&(*prior).prior, &EstimateInput { cpf: &cpf, ..EstimateInput::default() }, &config))?;
        *out = Box::into_raw(Box::new(EgokitEstimate { estimate }));
        Ok(())
    })
}

/// Frame count of an estimate (0 for null).
///
/// # Safety
/// `estimate` must be null or come from `egokit_estimate`.
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate_len(estimate: *const EgokitEstimate) -> usize {
    if estimate.is_null() {
        return 0;
    }
    (*estimate).estimate.len()
}

/// World joint positions, `len × egokit_joint_count() × 3` doubles.
///
/// # Safety
/// `estimate` must come from `egokit_estimate`; `out` must hold `capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate_joint_positions(estimate: *const EgokitEstimate, out: *mut f64, capacity: usize) -> EgokitStatus {
    guard(|| {
        non_null(estimate, "estimate")?;
        let values: Vec<f64> =
            (*estimate).estimate.frames.iter().flat_map(|f| f.joints_world.iter().flat_map(|j| [j.position.x, j.position.y, j.position.z])).collect();
        write_out(&values, out, capacity)
    })
}

/// Body CPF poses of the estimate, `len × 12` doubles.
///
/// # Safety
/// `estimate` must come from `egokit_estimate`; `out` must hold `capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate_cpf_poses(estimate: *const EgokitEstimate, out: *mut f64, capacity: usize) -> EgokitStatus {
    guard(|| {
        non_null(estimate, "estimate")?;
        let values: Vec<f64> = (*estimate).estimate.cpf_trajectory().iter().flat_map(|p| p.to_array()).collect();
        write_out(&values, out, capacity)
    })
}

/// Shape parameters (height scale, arm scale) of the estimate.
///
/// # Safety
/// `estimate` must come from `egokit_estimate`; `out` must hold 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate_shape(estimate: *const EgokitEstimate, out: *mut f64) -> EgokitStatus {
    guard(|| {
        non_null(estimate, "estimate")?;
        write_out(&(*estimate).estimate.shape.beta, out, 2)
    })
}

/// # Safety
/// `estimate` must be null or come from `egokit_estimate`, and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate_free(estimate: *mut EgokitEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// Floor height from `n` points (`3n` doubles) with per-point confidences,
/// using the default RANSAC settings and the given seed.
///
/// # Safety
/// `points` must hold `3n` doubles, `confidence` `n` doubles; `z_out` and
/// `inliers_out` must be writable (`inliers_out` may be null).
#[no_mangle]
pub unsafe extern "C" fn egokit_estimate_floor(
    points: *const f64,
    confidence: *const f64,
    n: usize,
    seed: u64,
    z_out: *mut f64,
    inliers_out: *mut usize,
) -> EgokitStatus {
    guard(|| {
        non_null(points, "points")?;
        non_null(confidence, "confidence")?;
        non_null(z_out, "z_out")?;
        let p = std::slice::from_raw_parts(points, 3 * n);
        let c = std::slice::from_raw_parts(confidence, n).to_vec();
        let cloud = lift(SparsePointCloud::new(p.chunks(3).map(|v| Vector3::new(v[0], v[1], v[2])).collect(), c))?;
        let est = lift(scene::estimate_floor(&cloud, &FloorConfig { seed, ..FloorConfig::default() }))?;
        *z_out = est.z;
        if !inliers_out.is_null() {
            *inliers_out = est.inliers;
        }
        Ok(())
    })
}

/// Writes the skeleton content hash (NUL-terminated) into `buf`; returns its
/// length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn egokit_skeleton_hash(buf: *mut c_char, len: usize) -> usize {
    let hash = body::skeleton().hash();
    if !buf.is_null() && len > 0 {
        let n = hash.len().min(len - 1);
        std::ptr::copy_nonoverlapping(hash.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    hash.len()
}
