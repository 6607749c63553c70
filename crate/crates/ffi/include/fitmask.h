#ifndef FITMASK_H
#define FITMASK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FmScaling {
  /**
   * `(A - min) / (1e-7 + max)`.
   */
  FM_SCALING_LITERAL = 0,
  /**
   * `(A - min) / (1e-7 + max - min)`.
   */
  FM_SCALING_RANGE = 1,
} FmScaling;

typedef enum FmSimilarity {
  FM_SIMILARITY_COSINE = 0,
  FM_SIMILARITY_L2 = 1,
} FmSimilarity;

/**
 * Status codes returned by every fallible call.
 */
typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_POINTER = 1,
  FM_STATUS_ARGUMENT = 2,
  FM_STATUS_CONFIG = 3,
  FM_STATUS_DATA = 4,
  FM_STATUS_FORMAT = 5,
  FM_STATUS_IO = 6,
  FM_STATUS_NUMERIC = 7,
  FM_STATUS_STATE = 8,
  FM_STATUS_USAGE = 9,
  FM_STATUS_PANIC = 10,
} FmStatus;

/**
 * Opaque frozen model loaded from a checkpoint.
 */
typedef struct FmModel FmModel;

/**
 * Retrieval metrics in percent.
 */
typedef struct FmRetrievalReport {
  double rank1;
  double rank5;
  double map;
  size_t queries;
  size_t excluded;
} FmRetrievalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fm_version(void);

/**
 * Loads a checkpoint into a new model handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FmStatus fm_model_load(const char *path, struct FmModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `fm_model_load` and not be used afterwards.
 */
void fm_model_free(struct FmModel *model);

/**
 * Writes the network input side, feature dimension and grid shape.
 *
 * # Safety
 * All pointers must be valid or null (null outputs are skipped).
 */
enum FmStatus fm_model_info(const struct FmModel *model,
                            size_t *input_size,
                            size_t *feature_dim,
                            size_t *grid_h,
                            size_t *grid_w);

/**
 * Extracts features of `count` RGB images (`height x width x 3` f32 in
 * [0, 1], channels last, packed back to back) into `out`, row-major
 * `count x feature_dim`.
 *
 * # Safety
 * `pixels` must hold `count*height*width*3` floats and `out` `out_len` doubles.
 */
enum FmStatus fm_model_extract(const struct FmModel *model,
                               const float *pixels,
                               size_t count,
                               size_t width,
                               size_t height,
                               double *out,
                               size_t out_len);

/**
 * Normalized attention mask of one image, `grid_h x grid_w` row-major.
 *
 * # Safety
 * `pixels` must hold `height*width*3` floats and `out` `out_len` doubles.
 */
enum FmStatus fm_model_attention(const struct FmModel *model,
                                 const float *pixels,
                                 size_t width,
                                 size_t height,
                                 double *out,
                                 size_t out_len);

/**
 * Leave-one-out retrieval over `rows x dim` row-major features.
 *
 * # Safety
 * `features` must hold `rows*dim` doubles, `labels` `rows` values, `out` be valid.
 */
enum FmStatus fm_retrieval_eval(const double *features,
                                size_t rows,
                                size_t dim,
                                const uint32_t *labels,
                                enum FmSimilarity metric,
                                struct FmRetrievalReport *out);

/**
 * Attention normalization of a raw `h x w` map into `out` (same size).
 *
 * # Safety
 * `raw` and `out` must each hold `h*w` doubles.
 */
enum FmStatus fm_attention_normalize(const double *raw,
                                     size_t h,
                                     size_t w,
                                     enum FmScaling scaling,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FITMASK_H */
