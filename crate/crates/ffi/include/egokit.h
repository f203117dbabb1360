#ifndef EGOKIT_H
#define EGOKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define EGOKIT_POSE_STRIDE 12

typedef enum EgokitStatus {
  EGOKIT_STATUS_OK = 0,
  EGOKIT_STATUS_NULL_POINTER = 1,
  EGOKIT_STATUS_INVALID_INPUT = 2,
  EGOKIT_STATUS_DEGENERATE = 3,
  EGOKIT_STATUS_SHAPE_MISMATCH = 4,
  EGOKIT_STATUS_INSUFFICIENT_DATA = 5,
  EGOKIT_STATUS_NON_FINITE = 6,
  EGOKIT_STATUS_PARSE = 7,
  EGOKIT_STATUS_IO = 8,
  EGOKIT_STATUS_CONFIG = 9,
  EGOKIT_STATUS_DIVERGED = 10,
  EGOKIT_STATUS_BUFFER_TOO_SMALL = 11,
  EGOKIT_STATUS_PANIC = 12,
} EgokitStatus;

/**
 * The result of one estimation.
 */
typedef struct EgokitEstimate EgokitEstimate;

/**
 * A trained motion prior.
 */
typedef struct EgokitPrior EgokitPrior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t egokit_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *egokit_version(void);

/**
 * Number of joints reported per frame by `egokit_estimate_joint_positions`.
 */
size_t egokit_joint_count(void);

/**
 * Conditioning features per timestep for a variant tag, or 0 for an
 * unknown tag.
 */
size_t egokit_feature_dim(uint32_t variant);

/**
 * Encodes `len` CPF poses with conditioning variant `variant` into `out`
 * (`len × egokit_feature_dim(variant)` doubles).
 *
 * # Safety
 * `poses` must hold `12 · len` doubles and `out` `capacity` doubles.
 */
enum EgokitStatus egokit_encode_conditioning(uint32_t variant,
                                             const double *poses,
                                             size_t len,
                                             double *out,
                                             size_t capacity);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EgokitStatus egokit_prior_load(const char *path, struct EgokitPrior **out);

/**
 * Conditioning variant tag of a loaded prior.
 *
 * # Safety
 * `prior` must come from `egokit_prior_load`.
 */
uint32_t egokit_prior_variant(const struct EgokitPrior *prior);

/**
 * # Safety
 * `prior` must be null or come from `egokit_prior_load`, and is invalid
 * afterwards.
 */
void egokit_prior_free(struct EgokitPrior *prior);

/**
 * Samples a body for `len` world-frame CPF poses with `steps` DDIM steps
 * (0 selects the default) and the given seed, without guidance.
 *
 * # Safety
 * `prior` must come from `egokit_prior_load`; `poses` must hold `12 · len`
 * doubles; `out` must be writable.
 */
enum EgokitStatus egokit_estimate(const struct EgokitPrior *prior,
                                  const double *poses,
                                  size_t len,
                                  uint32_t steps,
                                  uint64_t seed,
                                  struct EgokitEstimate **out);

/**
 * Frame count of an estimate (0 for null).
 *
 * # Safety
 * `estimate` must be null or come from `egokit_estimate`.
 */
size_t egokit_estimate_len(const struct EgokitEstimate *estimate);

/**
 * World joint positions, `len × egokit_joint_count() × 3` doubles.
 *
 * # Safety
 * `estimate` must come from `egokit_estimate`; `out` must hold `capacity`
 * doubles.
 */
enum EgokitStatus egokit_estimate_joint_positions(const struct EgokitEstimate *estimate,
                                                  double *out,
                                                  size_t capacity);

/**
 * Body CPF poses of the estimate, `len × 12` doubles.
 *
 * # Safety
 * `estimate` must come from `egokit_estimate`; `out` must hold `capacity`
 * doubles.
 */
enum EgokitStatus egokit_estimate_cpf_poses(const struct EgokitEstimate *estimate,
                                            double *out,
                                            size_t capacity);

/**
 * Shape parameters (height scale, arm scale) of the estimate.
 *
 * # Safety
 * `estimate` must come from `egokit_estimate`; `out` must hold 2 doubles.
 */
enum EgokitStatus egokit_estimate_shape(const struct EgokitEstimate *estimate, double *out);

/**
 * # Safety
 * `estimate` must be null or come from `egokit_estimate`, and is invalid
 * afterwards.
 */
void egokit_estimate_free(struct EgokitEstimate *estimate);

/**
 * Floor height from `n` points (`3n` doubles) with per-point confidences,
 * using the default RANSAC settings and the given seed.
 *
 * # Safety
 * `points` must hold `3n` doubles, `confidence` `n` doubles; `z_out` and
 * `inliers_out` must be writable (`inliers_out` may be null).
 */
enum EgokitStatus egokit_estimate_floor(const double *points,
                                        const double *confidence,
                                        size_t n,
                                        uint64_t seed,
                                        double *z_out,
                                        size_t *inliers_out);

/**
 * Writes the skeleton content hash (NUL-terminated) into `buf`; returns its
 * length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t egokit_skeleton_hash(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EGOKIT_H */
