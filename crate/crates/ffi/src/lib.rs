//! C ABI for the detector-fusion library.
//!
//! Conventions, mirrored in the generated `include/detfuse.h`:
//!
//! * Every fallible function returns a [`DetfuseStatus`]; results are
//!   written through out-pointers, which are left untouched on failure.
//! * Handles (`DetfuseDetections`, `DetfuseCalibration`) are opaque.
//!   Free them with the matching `*_free` function, exactly once; a null
//!   pointer is a safe no-op there and a `DETFUSE_STATUS_NULL_POINTER`
//!   error everywhere else.
//! * [`detfuse_last_error`] returns a human-readable message for the most
//!   recent failure on the calling thread. The pointer is valid until the
//!   next failing call on that thread.
//! * Strings are NUL-terminated UTF-8.
//!
//! The surface covers the runtime pipeline: building or loading detection
//! sets, fitting or loading score calibrations, overlap-weighted (`sc`) and
//! content-weighted (`csbc`) fusion, non-maximum suppression, and
//! log-average miss-rate evaluation. Model *training* stays in the `detfuse`
//! CLI; `csbc` here consumes the model directory the CLI produced.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, c_double, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use detfuse::calibration::{CalibrationError, CalibrationSet};
use detfuse::eval::{det_curve, log_average_miss_rate, EvalError};
use detfuse::features::{DescriptorTag, FeatureExtractor, ImageDir};
use detfuse::fusion::{fuse_csbc, fuse_sc, DetectorModel, FusionConfig, FusionError, FusionMode};
use detfuse::geometry::{greedy_nms, BoundingBox, GeometryError};
use detfuse::model_io::{
    read_detections_file, read_ground_truth_file, write_detections_file, Detection, DetectionSet,
    ModelIoError,
};
use detfuse::pls::PlsModel;

/// Result of every fallible call in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetfuseStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was out of range or otherwise malformed.
    InvalidArgument = 3,
    /// A file could not be read or written.
    Io = 4,
    /// The inputs were readable but the operation failed on them
    /// (degenerate data, missing calibration or model, missing image...).
    Runtime = 5,
}

/// Opaque set of detection windows from one detector.
pub struct DetfuseDetections(DetectionSet);

/// Opaque collection of per-detector affine score calibrations.
pub struct DetfuseCalibration(CalibrationSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl std::fmt::Display) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn fail(status: DetfuseStatus, message: impl std::fmt::Display) -> DetfuseStatus {
    set_error(message);
    status
}

/// Classifies a library error into an ABI status.
trait ToStatus: std::fmt::Display {
    fn status(&self) -> DetfuseStatus;
}

impl ToStatus for ModelIoError {
    fn status(&self) -> DetfuseStatus {
        match self {
            ModelIoError::Io(_) => DetfuseStatus::Io,
            ModelIoError::File { source, .. } => source.status(),
            _ => DetfuseStatus::Runtime,
        }
    }
}

impl ToStatus for CalibrationError {
    fn status(&self) -> DetfuseStatus {
        match self {
            CalibrationError::Io(_) => DetfuseStatus::Io,
            _ => DetfuseStatus::Runtime,
        }
    }
}

impl ToStatus for FusionError {
    fn status(&self) -> DetfuseStatus {
        match self {
            FusionError::InvalidThreshold(_) | FusionError::InvalidClamp(..) => {
                DetfuseStatus::InvalidArgument
            }
            _ => DetfuseStatus::Runtime,
        }
    }
}

impl ToStatus for EvalError {
    fn status(&self) -> DetfuseStatus {
        match self {
            EvalError::InvalidThreshold(_) => DetfuseStatus::InvalidArgument,
            EvalError::NoGroundTruth => DetfuseStatus::Runtime,
        }
    }
}

impl ToStatus for GeometryError {
    fn status(&self) -> DetfuseStatus {
        DetfuseStatus::InvalidArgument
    }
}

fn report<E: ToStatus>(err: E) -> DetfuseStatus {
    let status = err.status();
    set_error(err);
    status
}

/// Runs a closure, converting panics into `Runtime` instead of unwinding
/// across the C boundary.
fn guarded(f: impl FnOnce() -> DetfuseStatus) -> DetfuseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(DetfuseStatus::Runtime, "internal panic"),
    }
}

macro_rules! nonnull {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            return fail(
                DetfuseStatus::NullPointer,
                concat!("argument `", $name, "` is null"),
            );
        }
    };
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null (checked by caller
/// via `nonnull!`).
unsafe fn utf8<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, DetfuseStatus> {
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => Err(fail(
            DetfuseStatus::InvalidUtf8,
            format!("argument `{name}` is not valid UTF-8"),
        )),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn detfuse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread (empty string if
/// none). Valid until the next failing `detfuse_*` call on this thread.
#[no_mangle]
pub extern "C" fn detfuse_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ---- detection sets ----

/// Creates an empty detection set for `detector_id`.
///
/// # Safety
/// `detector_id` must be a valid NUL-terminated string; `out` must be a
/// valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn detfuse_detections_new(
    detector_id: *const c_char,
    out: *mut *mut DetfuseDetections,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(detector_id, "detector_id");
        nonnull!(out, "out");
        let id = match utf8(detector_id, "detector_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match DetectionSet::new(id) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(DetfuseDetections(set)));
                DetfuseStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Loads a detection file. The detector id is taken from the file stem.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn detfuse_detections_load(
    path: *const c_char,
    out: *mut *mut DetfuseDetections,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(path, "path");
        nonnull!(out, "out");
        let path = match utf8(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let stem = match Path::new(path).file_stem().map(|s| s.to_string_lossy().into_owned()) {
            Some(s) if !s.is_empty() => s,
            _ => {
                return fail(
                    DetfuseStatus::InvalidArgument,
                    format!("cannot derive a detector id from path {path:?}"),
                )
            }
        };
        match read_detections_file(path, &stem) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(DetfuseDetections(set)));
                DetfuseStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Appends one window to the set.
///
/// # Safety
/// `set` must be a live handle from this library; `frame_id` must be a
/// valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn detfuse_detections_push(
    set: *mut DetfuseDetections,
    frame_id: *const c_char,
    x: c_double,
    y: c_double,
    w: c_double,
    h: c_double,
    score: c_double,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(set, "set");
        nonnull!(frame_id, "frame_id");
        let frame = match utf8(frame_id, "frame_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let set = &mut (*set).0;
        let bbox = match BoundingBox::new(x, y, w, h) {
            Ok(b) => b,
            Err(e) => return fail(DetfuseStatus::InvalidArgument, e),
        };
        let det = match Detection::new(frame, bbox, score, set.detector_id()) {
            Ok(d) => d,
            Err(e) => return fail(DetfuseStatus::InvalidArgument, e),
        };
        match set.push(det) {
            Ok(()) => DetfuseStatus::Ok,
            Err(e) => report(e),
        }
    })
}

/// Number of windows in the set; 0 for a null handle.
///
/// # Safety
/// `set` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn detfuse_detections_len(set: *const DetfuseDetections) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).0.len()
}

/// Writes the set to `path` in the canonical text format.
///
/// # Safety
/// `set` must be a live handle from this library; `path` must be a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn detfuse_detections_save(
    set: *const DetfuseDetections,
    path: *const c_char,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(set, "set");
        nonnull!(path, "path");
        let path = match utf8(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match write_detections_file(&(*set).0, path) {
            Ok(()) => DetfuseStatus::Ok,
            Err(e) => report(e),
        }
    })
}

/// Releases a detection set. Null is a no-op. The handle must not be used
/// afterwards.
///
/// # Safety
/// `set` must be a handle obtained from this library that has not been
/// freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn detfuse_detections_free(set: *mut DetfuseDetections) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ---- calibration ----

/// Creates an empty calibration collection.
///
/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn detfuse_calibration_new(
    out: *mut *mut DetfuseCalibration,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(out, "out");
        *out = Box::into_raw(Box::new(DetfuseCalibration(CalibrationSet::new())));
        DetfuseStatus::Ok
    })
}

/// Fits an affine map for `detector_id` from raw score samples: the
/// detector's own scores and the root detector's scores on the same data.
/// Replaces any previous map for that detector.
///
/// # Safety
/// `cal` must be a live handle; `detector_id` a valid NUL-terminated
/// string; `detector_scores`/`root_scores` must point to `n_detector` /
/// `n_root` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn detfuse_calibration_fit(
    cal: *mut DetfuseCalibration,
    detector_id: *const c_char,
    detector_scores: *const c_double,
    n_detector: usize,
    root_scores: *const c_double,
    n_root: usize,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(cal, "cal");
        nonnull!(detector_id, "detector_id");
        nonnull!(detector_scores, "detector_scores");
        nonnull!(root_scores, "root_scores");
        let id = match utf8(detector_id, "detector_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let source = std::slice::from_raw_parts(detector_scores, n_detector);
        let reference = std::slice::from_raw_parts(root_scores, n_root);
        match detfuse::calibration::fit_calibration(id, source, reference) {
            Ok(map) => {
                (*cal).0.insert(map);
                DetfuseStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Loads calibration maps from a TOML file written by `detfuse calib` or
/// [`detfuse_calibration_save`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn detfuse_calibration_load(
    path: *const c_char,
    out: *mut *mut DetfuseCalibration,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(path, "path");
        nonnull!(out, "out");
        let path = match utf8(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match CalibrationSet::load_from_path(path) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(DetfuseCalibration(set)));
                DetfuseStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Writes the calibration maps to a TOML file.
///
/// # Safety
/// `cal` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn detfuse_calibration_save(
    cal: *const DetfuseCalibration,
    path: *const c_char,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(cal, "cal");
        nonnull!(path, "path");
        let path = match utf8(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match (*cal).0.save_to_path(path) {
            Ok(()) => DetfuseStatus::Ok,
            Err(e) => report(e),
        }
    })
}

/// Releases a calibration handle. Null is a no-op.
///
/// # Safety
/// `cal` must be a handle obtained from this library that has not been
/// freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn detfuse_calibration_free(cal: *mut DetfuseCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

// ---- fusion ----

/// # Safety
/// Caller contract of [`detfuse_fuse_sc`] / [`detfuse_fuse_csbc`].
unsafe fn collect_supports(
    supports: *const *const DetfuseDetections,
    n_supports: usize,
) -> Result<Vec<DetectionSet>, DetfuseStatus> {
    let handles = std::slice::from_raw_parts(supports, n_supports);
    let mut sets = Vec::with_capacity(n_supports);
    for (i, &handle) in handles.iter().enumerate() {
        if handle.is_null() {
            return Err(fail(
                DetfuseStatus::NullPointer,
                format!("support handle {i} is null"),
            ));
        }
        sets.push((*handle).0.clone());
    }
    Ok(sets)
}

/// Overlap-weighted fusion: rescores `root`'s windows with calibrated
/// support scores weighted by Jaccard overlap, dropping unsupported
/// windows. `overlap_threshold` is the minimum overlap for support
/// (use 0.5 for the standard setting).
///
/// # Safety
/// `root` and `cal` must be live handles; `supports` must point to
/// `n_supports` live handles; `out` must be a valid pointer to receive the
/// fused set.
#[no_mangle]
pub unsafe extern "C" fn detfuse_fuse_sc(
    root: *const DetfuseDetections,
    supports: *const *const DetfuseDetections,
    n_supports: usize,
    cal: *const DetfuseCalibration,
    overlap_threshold: c_double,
    out: *mut *mut DetfuseDetections,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(root, "root");
        nonnull!(supports, "supports");
        nonnull!(cal, "cal");
        nonnull!(out, "out");
        let others = match collect_supports(supports, n_supports) {
            Ok(sets) => sets,
            Err(status) => return status,
        };
        let cfg = FusionConfig { overlap_threshold, ..FusionConfig::default() };
        match fuse_sc(&(*root).0, &others, &(*cal).0, &cfg) {
            Ok(fused) => {
                *out = Box::into_raw(Box::new(DetfuseDetections(fused)));
                DetfuseStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Content-weighted fusion: like [`detfuse_fuse_sc`], but each support
/// window's contribution is weighted by a trained content model instead of
/// its overlap. `models_dir` must hold one `<detector_id>.plsmodel` per
/// support detector (as written by `detfuse train`); `images_dir` supplies
/// the frames (`<frame_id>.pgm`/`.png`) and may be null when every model
/// uses externally precomputed features — which this ABI does not supply,
/// so models stamped `external` are rejected. Weights are clamped to
/// `[clamp_lo, clamp_hi]`.
///
/// # Safety
/// `root` and `cal` must be live handles; `supports` must point to
/// `n_supports` live handles; `models_dir` must be a valid NUL-terminated
/// string; `images_dir` must be a valid NUL-terminated string or null;
/// `out` must be a valid pointer to receive the fused set.
#[no_mangle]
pub unsafe extern "C" fn detfuse_fuse_csbc(
    root: *const DetfuseDetections,
    supports: *const *const DetfuseDetections,
    n_supports: usize,
    cal: *const DetfuseCalibration,
    models_dir: *const c_char,
    images_dir: *const c_char,
    overlap_threshold: c_double,
    clamp_lo: c_double,
    clamp_hi: c_double,
    out: *mut *mut DetfuseDetections,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(root, "root");
        nonnull!(supports, "supports");
        nonnull!(cal, "cal");
        nonnull!(models_dir, "models_dir");
        nonnull!(out, "out");
        let models_dir = match utf8(models_dir, "models_dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let images_dir = if images_dir.is_null() {
            None
        } else {
            match utf8(images_dir, "images_dir") {
                Ok(s) => Some(s),
                Err(status) => return status,
            }
        };
        let others = match collect_supports(supports, n_supports) {
            Ok(sets) => sets,
            Err(status) => return status,
        };

        let mut models = BTreeMap::new();
        for set in &others {
            let path = Path::new(models_dir).join(format!("{}.plsmodel", set.detector_id()));
            let model = match PlsModel::load_from_path(&path) {
                Ok(m) => m,
                Err(e) => {
                    return fail(
                        DetfuseStatus::Runtime,
                        format!("cannot load model {}: {e}", path.display()),
                    )
                }
            };
            let extractor = match FeatureExtractor::from_tag(model.feature_tag()) {
                Some(ex) => ex,
                None => {
                    return fail(
                        DetfuseStatus::Runtime,
                        format!(
                            "model {} is stamped `{}`; externally computed features are not \
                             available through this ABI",
                            path.display(),
                            DescriptorTag::External
                        ),
                    )
                }
            };
            let model = match DetectorModel::new(model, extractor) {
                Ok(m) => m,
                Err(e) => return report(e),
            };
            models.insert(set.detector_id().to_string(), model);
        }

        let cfg = FusionConfig {
            overlap_threshold,
            mode: FusionMode::Csbc,
            weight_clamp: (clamp_lo, clamp_hi),
            ..FusionConfig::default()
        };
        let images = ImageDir::new(images_dir.unwrap_or("<none>"));
        match fuse_csbc(&(*root).0, &others, &(*cal).0, &models, &images, &cfg) {
            Ok(fused) => {
                *out = Box::into_raw(Box::new(DetfuseDetections(fused)));
                DetfuseStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

// ---- post-processing and evaluation ----

/// Greedy per-frame non-maximum suppression at the given overlap threshold,
/// returning the surviving windows as a new set.
///
/// # Safety
/// `set` must be a live handle; `out` must be a valid pointer to receive
/// the result.
#[no_mangle]
pub unsafe extern "C" fn detfuse_nms(
    set: *const DetfuseDetections,
    overlap_threshold: c_double,
    out: *mut *mut DetfuseDetections,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(set, "set");
        nonnull!(out, "out");
        let source = &(*set).0;
        let mut kept = match DetectionSet::new(source.detector_id()) {
            Ok(s) => s,
            Err(e) => return report(e),
        };
        let frame_ids: Vec<String> = source.frame_ids().map(str::to_string).collect();
        for frame_id in frame_ids {
            let survivors = match greedy_nms(source.frame(&frame_id), overlap_threshold) {
                Ok(v) => v,
                Err(e) => return report(e),
            };
            for det in survivors {
                if let Err(e) = kept.push(det) {
                    return report(e);
                }
            }
        }
        *out = Box::into_raw(Box::new(DetfuseDetections(kept)));
        DetfuseStatus::Ok
    })
}

/// Log-average miss rate (percent) of `set` against the ground-truth file
/// at `gt_path`, with matching at Jaccard >= `iou_threshold`.
///
/// # Safety
/// `set` must be a live handle; `gt_path` a valid NUL-terminated string;
/// `out_lamr` a valid pointer to receive the value.
#[no_mangle]
pub unsafe extern "C" fn detfuse_eval_lamr(
    set: *const DetfuseDetections,
    gt_path: *const c_char,
    iou_threshold: c_double,
    out_lamr: *mut c_double,
) -> DetfuseStatus {
    guarded(|| {
        nonnull!(set, "set");
        nonnull!(gt_path, "gt_path");
        nonnull!(out_lamr, "out_lamr");
        let path = match utf8(gt_path, "gt_path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let gts = match read_ground_truth_file(path) {
            Ok(g) => g,
            Err(e) => return report(e),
        };
        let curve = match det_curve(&(*set).0, &gts, iou_threshold) {
            Ok(c) => c,
            Err(e) => return report(e),
        };
        *out_lamr = log_average_miss_rate(&curve);
        DetfuseStatus::Ok
    })
}
