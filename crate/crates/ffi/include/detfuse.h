#ifndef DETFUSE_H
#define DETFUSE_H

/* Generated by cbindgen from detfuse-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call in this ABI.
 */
typedef enum DetfuseStatus {
  /**
   * The call succeeded.
   */
  DETFUSE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DETFUSE_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DETFUSE_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was out of range or otherwise malformed.
   */
  DETFUSE_STATUS_INVALID_ARGUMENT = 3,
  /**
   * A file could not be read or written.
   */
  DETFUSE_STATUS_IO = 4,
  /**
   * The inputs were readable but the operation failed on them
   * (degenerate data, missing calibration or model, missing image...).
   */
  DETFUSE_STATUS_RUNTIME = 5,
} DetfuseStatus;

/**
 * Opaque collection of per-detector affine score calibrations.
 */
typedef struct DetfuseCalibration DetfuseCalibration;

/**
 * Opaque set of detection windows from one detector.
 */
typedef struct DetfuseDetections DetfuseDetections;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *detfuse_version(void);

/**
 * Message for the most recent failure on this thread (empty string if
 * none). Valid until the next failing `detfuse_*` call on this thread.
 */
const char *detfuse_last_error(void);

/**
 * Creates an empty detection set for `detector_id`.
 *
 * # Safety
 * `detector_id` must be a valid NUL-terminated string; `out` must be a
 * valid pointer to receive the handle.
 */
enum DetfuseStatus detfuse_detections_new(const char *detector_id, struct DetfuseDetections **out);

/**
 * Loads a detection file. The detector id is taken from the file stem.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to receive the handle.
 */
enum DetfuseStatus detfuse_detections_load(const char *path, struct DetfuseDetections **out);

/**
 * Appends one window to the set.
 *
 * # Safety
 * `set` must be a live handle from this library; `frame_id` must be a
 * valid NUL-terminated string.
 */
enum DetfuseStatus detfuse_detections_push(struct DetfuseDetections *set,
                                           const char *frame_id,
                                           double x,
                                           double y,
                                           double w,
                                           double h,
                                           double score);

/**
 * Number of windows in the set; 0 for a null handle.
 *
 * # Safety
 * `set` must be a live handle from this library or null.
 */
size_t detfuse_detections_len(const struct DetfuseDetections *set);

/**
 * Writes the set to `path` in the canonical text format.
 *
 * # Safety
 * `set` must be a live handle from this library; `path` must be a valid
 * NUL-terminated string.
 */
enum DetfuseStatus detfuse_detections_save(const struct DetfuseDetections *set, const char *path);

/**
 * Releases a detection set. Null is a no-op. The handle must not be used
 * afterwards.
 *
 * # Safety
 * `set` must be a handle obtained from this library that has not been
 * freed yet, or null.
 */
void detfuse_detections_free(struct DetfuseDetections *set);

/**
 * Creates an empty calibration collection.
 *
 * # Safety
 * `out` must be a valid pointer to receive the handle.
 */
enum DetfuseStatus detfuse_calibration_new(struct DetfuseCalibration **out);

/**
 * Fits an affine map for `detector_id` from raw score samples: the
 * detector's own scores and the root detector's scores on the same data.
 * Replaces any previous map for that detector.
 *
 * # Safety
 * `cal` must be a live handle; `detector_id` a valid NUL-terminated
 * string; `detector_scores`/`root_scores` must point to `n_detector` /
 * `n_root` readable doubles.
 */
enum DetfuseStatus detfuse_calibration_fit(struct DetfuseCalibration *cal,
                                           const char *detector_id,
                                           const double *detector_scores,
                                           size_t n_detector,
                                           const double *root_scores,
                                           size_t n_root);

/**
 * Loads calibration maps from a TOML file written by `detfuse calib` or
 * [`detfuse_calibration_save`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to receive the handle.
 */
enum DetfuseStatus detfuse_calibration_load(const char *path, struct DetfuseCalibration **out);

/**
 * Writes the calibration maps to a TOML file.
 *
 * # Safety
 * `cal` must be a live handle; `path` a valid NUL-terminated string.
 */
enum DetfuseStatus detfuse_calibration_save(const struct DetfuseCalibration *cal, const char *path);

/**
 * Releases a calibration handle. Null is a no-op.
 *
 * # Safety
 * `cal` must be a handle obtained from this library that has not been
 * freed yet, or null.
 */
void detfuse_calibration_free(struct DetfuseCalibration *cal);

/**
 * Overlap-weighted fusion: rescores `root`'s windows with calibrated
 * support scores weighted by Jaccard overlap, dropping unsupported
 * windows. `overlap_threshold` is the minimum overlap for support
 * (use 0.5 for the standard setting).
 *
 * # Safety
 * `root` and `cal` must be live handles; `supports` must point to
 * `n_supports` live handles; `out` must be a valid pointer to receive the
 * fused set.
 */
enum DetfuseStatus detfuse_fuse_sc(const struct DetfuseDetections *root,
                                   const struct DetfuseDetections *const *supports,
                                   size_t n_supports,
                                   const struct DetfuseCalibration *cal,
                                   double overlap_threshold,
                                   struct DetfuseDetections **out);

/**
 * Content-weighted fusion: like [`detfuse_fuse_sc`], but each support
 * window's contribution is weighted by a trained content model instead of
 * its overlap. `models_dir` must hold one `<detector_id>.plsmodel` per
 * support detector (as written by `detfuse train`); `images_dir` supplies
 * the frames (`<frame_id>.pgm`/`.png`) and may be null when every model
 * uses externally precomputed features — which this ABI does not supply,
 * so models stamped `external` are rejected. Weights are clamped to
 * `[clamp_lo, clamp_hi]`.
 *
 * # Safety
 * `root` and `cal` must be live handles; `supports` must point to
 * `n_supports` live handles; `models_dir` must be a valid NUL-terminated
 * string; `images_dir` must be a valid NUL-terminated string or null;
 * `out` must be a valid pointer to receive the fused set.
 */
enum DetfuseStatus detfuse_fuse_csbc(const struct DetfuseDetections *root,
                                     const struct DetfuseDetections *const *supports,
                                     size_t n_supports,
                                     const struct DetfuseCalibration *cal,
                                     const char *models_dir,
                                     const char *images_dir,
                                     double overlap_threshold,
                                     double clamp_lo,
                                     double clamp_hi,
                                     struct DetfuseDetections **out);

/**
 * Greedy per-frame non-maximum suppression at the given overlap threshold,
 * returning the surviving windows as a new set.
 *
 * # Safety
 * `set` must be a live handle; `out` must be a valid pointer to receive
 * the result.
 */
enum DetfuseStatus detfuse_nms(const struct DetfuseDetections *set,
                               double overlap_threshold,
                               struct DetfuseDetections **out);

/**
 * Log-average miss rate (percent) of `set` against the ground-truth file
 * at `gt_path`, with matching at Jaccard >= `iou_threshold`.
 *
 * # Safety
 * `set` must be a live handle; `gt_path` a valid NUL-terminated string;
 * `out_lamr` a valid pointer to receive the value.
 */
enum DetfuseStatus detfuse_eval_lamr(const struct DetfuseDetections *set,
                                     const char *gt_path,
                                     double iou_threshold,
                                     double *out_lamr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DETFUSE_H */
