#ifndef MSNET_H
#define MSNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MsnetStatus {
  MSNET_STATUS_OK = 0,
  MSNET_STATUS_NULL_POINTER = 1,
  MSNET_STATUS_INVALID_ARGUMENT = 2,
  MSNET_STATUS_IO = 3,
  MSNET_STATUS_CHECKPOINT = 4,
  MSNET_STATUS_SHAPE = 5,
  MSNET_STATUS_METRIC = 6,
  MSNET_STATUS_PANIC = 7,
} MsnetStatus;

/**
 * Opaque model handle.
 */
typedef struct MsnetModel MsnetModel;

/**
 * The six per-image scores.
 */
typedef struct MsnetScores {
  double dice;
  double iou;
  double weighted_fmeasure;
  double s_measure;
  double e_measure;
  double mae;
} MsnetScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *msnet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *msnet_version(void);

/**
 * Creates a freshly initialized model. `fusion_add` selects addition
 * instead of subtraction fusion.
 *
 * # Safety
 * `out` must be a valid pointer to writable handle storage.
 */
enum MsnetStatus msnet_model_new(size_t input_size,
                                 size_t channels,
                                 size_t depth,
                                 bool fusion_add,
                                 bool lossnet_enabled,
                                 uint64_t seed,
                                 struct MsnetModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MsnetStatus msnet_model_load(const char *path, struct MsnetModel **out);

/**
 * Writes a checkpoint file atomically.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum MsnetStatus msnet_model_save(const struct MsnetModel *model, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void msnet_model_free(struct MsnetModel *model);

/**
 * Square input side the model expects, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t msnet_model_input_size(const struct MsnetModel *model);

/**
 * Number of scalar parameters, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t msnet_model_param_count(const struct MsnetModel *model);

/**
 * Probability map for one channel-major 3×S×S image (S = input size).
 * Writes S×S probabilities in row-major order to `out`.
 *
 * # Safety
 * `image` must hold `image_len` readable values and `out` `out_len`
 * writable values.
 */
enum MsnetStatus msnet_model_predict(const struct MsnetModel *model,
                                     const double *image,
                                     size_t image_len,
                                     double *out,
                                     size_t out_len);

/**
 * All six metrics for a height×width prediction in [0, 1] against a
 * binary ground truth. Dice and IoU binarize at `threshold`.
 *
 * # Safety
 * `pred` and `gt` must each hold `height·width` readable values and
 * `out` must be writable.
 */
enum MsnetStatus msnet_evaluate(const double *pred,
                                const double *gt,
                                size_t height,
                                size_t width,
                                double threshold,
                                struct MsnetScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSNET_H */
