#ifndef MIRROR_UNET_H
#define MIRROR_UNET_H

/* Generated by cbindgen from mirror-unet-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum MuStatus {
  MU_STATUS_OK = 0,
  MU_STATUS_INVALID_ARGUMENT = 1,
  MU_STATUS_IO_ERROR = 2,
  MU_STATUS_RUNTIME_ERROR = 3,
} MuStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct MuModel MuModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mu_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mu_last_error(void);

/**
 * Loads a mirror-model or baseline checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MuStatus mu_model_load(const char *path, struct MuModel **out);

/**
 * Releases a model handle. Passing NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a pointer from `mu_model_load`, not yet freed.
 */
void mu_model_free(struct MuModel *model);

/**
 * Writes the model's training patch shape into `out_dims[3]`.
 *
 * # Safety
 * `model` must be a live handle; `out_dims` must point to 3 writable u64.
 */
enum MuStatus mu_model_patch_shape(const struct MuModel *model, uint64_t *out_dims);

/**
 * Sliding-window probability prediction over two aligned volumes; writes
 * `nx*ny*nz` probabilities into `out_probs` (the final fused map for v4,
 * the primary-branch map otherwise).
 *
 * # Safety
 * All pointers must reference buffers of the documented sizes.
 */
enum MuStatus mu_model_predict(const struct MuModel *model,
                               const float *volume_a,
                               const float *volume_b,
                               const uint64_t *dims,
                               const float *spacing,
                               double overlap,
                               float *out_probs);

/**
 * Dice score of two binary masks (values 0 or 1); both masks empty gives
 * 1.0.
 *
 * # Safety
 * `pred`/`gt` must hold `nx*ny*nz` floats; `out` must be writable.
 */
enum MuStatus mu_dice(const float *pred, const float *gt, const uint64_t *dims, double *out);

/**
 * Lesion-wise false-positive / false-negative volumes in milliliters
 * (26-connectivity components).
 *
 * # Safety
 * Buffers sized as in [`mu_dice`]; spacing holds 3 positive floats.
 */
enum MuStatus mu_fp_fn_volumes(const float *pred,
                               const float *gt,
                               const uint64_t *dims,
                               const float *spacing,
                               double *out_fpv_ml,
                               double *out_fnv_ml);

/**
 * Weighted logit fusion: out = (1 - theta) * pet + theta * ct.
 *
 * # Safety
 * All buffers must hold `len` floats.
 */
enum MuStatus mu_fuse_logits(const float *ct,
                             const float *pet,
                             uint64_t len,
                             float theta,
                             float *out);

/**
 * Generates a PET/CT phantom with `lesion_count` lesions into three caller
 * buffers of `nx*ny*nz` floats each (CT, PET, lesion mask). Deterministic
 * in `seed`.
 *
 * # Safety
 * Output buffers must each hold `nx*ny*nz` floats.
 */
enum MuStatus mu_phantom(const uint64_t *dims,
                         const float *spacing,
                         uint32_t lesion_count,
                         uint64_t seed,
                         float *out_ct,
                         float *out_pet,
                         float *out_mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIRROR_UNET_H */
