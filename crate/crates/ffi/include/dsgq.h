#ifndef DSGQ_H
#define DSGQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DsgqStatus {
  DSGQ_STATUS_OK = 0,
  DSGQ_STATUS_NULL_POINTER = 1,
  DSGQ_STATUS_INVALID_ARGUMENT = 2,
  DSGQ_STATUS_SHAPE = 3,
  DSGQ_STATUS_PARSE = 4,
  DSGQ_STATUS_IO = 5,
  DSGQ_STATUS_CONFIG = 6,
  DSGQ_STATUS_NON_FINITE = 7,
  DSGQ_STATUS_NUMERICAL = 8,
  DSGQ_STATUS_BUFFER_TOO_SMALL = 9,
  DSGQ_STATUS_PANIC = 10,
} DsgqStatus;

/**
 * Opaque network handle.
 */
typedef struct DsgqNetwork DsgqNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *dsgq_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dsgq_version(void);

/**
 * Loads a model file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DsgqStatus dsgq_network_load(const char *path, struct DsgqNetwork **out);

/**
 * Parses a model document held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DsgqStatus dsgq_network_from_json(const char *json, struct DsgqNetwork **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `net` must come from a constructor of this library and not be used again.
 */
void dsgq_network_free(struct DsgqNetwork *net);

/**
 * Flattened input size and output size of one sample.
 *
 * # Safety
 * `net` must be a live handle; `input_dim` and `output_dim` writable.
 */
enum DsgqStatus dsgq_network_dims(const struct DsgqNetwork *net,
                                  size_t *input_dim,
                                  size_t *output_dim);

/**
 * Eval-mode forward pass of `batch` samples; writes `batch x output_dim` logits.
 *
 * # Safety
 * `x` must hold `batch x input_dim` values and `out` `out_len` writable values.
 */
enum DsgqStatus dsgq_network_forward(const struct DsgqNetwork *net,
                                     const double *x,
                                     size_t batch,
                                     double *out,
                                     size_t out_len);

/**
 * Synthesizes one calibration batch. `config_json` is a run configuration
 * (null or `"{}"` for defaults). Writes `batch_size x input_dim` samples.
 *
 * # Safety
 * `net` must be a live handle; `config_json` null or NUL-terminated;
 * `out` must hold `out_len` values.
 */
enum DsgqStatus dsgq_ptq_generate(const struct DsgqNetwork *net,
                                  const char *config_json,
                                  double *out,
                                  size_t out_len);

/**
 * Correlation-inhibition loss of `features` against frozen `noise`, both
 * `batch x dim`, with noise-spectrum weights. `grad` (optional, may be null)
 * receives the `batch x dim` gradient.
 *
 * # Safety
 * Input buffers must hold `batch x dim` values; `value` must be writable;
 * `grad`, when non-null, must hold `grad_len` values.
 */
enum DsgqStatus dsgq_sci_loss(const double *features,
                              const double *noise,
                              size_t batch,
                              size_t dim,
                              double *value,
                              double *grad,
                              size_t grad_len);

/**
 * Symmetric eigendecomposition of the row-major `n x n` matrix `a`.
 * Eigenvalues descend; column `k` of `vectors` is the k-th eigenvector.
 *
 * # Safety
 * `a` and `vectors` must hold `n x n` values, `values` `n` values.
 */
enum DsgqStatus dsgq_eig_sym(const double *a, size_t n, double *values, double *vectors);

/**
 * Sum of the normalized similarity kernel of `batch x dim` features.
 *
 * # Safety
 * `features` must hold `batch x dim` values and `out` be writable.
 */
enum DsgqStatus dsgq_similarity_index(const double *features,
                                      size_t batch,
                                      size_t dim,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSGQ_H */
