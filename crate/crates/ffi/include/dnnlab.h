#ifndef DNNLAB_H
#define DNNLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  DNN_STATUS_OK = 0,
  DNN_STATUS_NULL_POINTER = 1,
  DNN_STATUS_INVALID_ARGUMENT = 2,
  DNN_STATUS_SHAPE = 3,
  DNN_STATUS_MISSING_FILE = 4,
  DNN_STATUS_INVALID_CONFIG = 5,
  DNN_STATUS_PARSE = 6,
  DNN_STATUS_NUMERICAL = 7,
  DNN_STATUS_IO = 8,
  DNN_STATUS_PANIC = 9,
} DnnStatus;

/**
 * Opaque network handle.
 */
typedef struct DnnNetwork DnnNetwork;

/**
 * Opaque fDLR transform handle.
 */
typedef struct DnnTransform DnnTransform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dnn_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void dnn_string_free(char *s);

/**
 * Seeded uniform initialisation; `sizes` lists input, hidden and output
 * widths.
 *
 * # Safety
 * `sizes` must point to `n_sizes` values; `out` must be writable.
 */
DnnStatus dnn_network_init(const size_t *sizes,
                           size_t n_sizes,
                           uint64_t seed,
                           double init_scale,
                           DnnNetwork **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
DnnStatus dnn_network_from_json(const char *json, DnnNetwork **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
DnnStatus dnn_network_load(const char *path, DnnNetwork **out);

/**
 * # Safety
 * `net` must be a live handle; `path` a NUL-terminated string.
 */
DnnStatus dnn_network_save(const DnnNetwork *net, const char *path);

/**
 * JSON form of the network; free the result with [`dnn_string_free`].
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
DnnStatus dnn_network_to_json(const DnnNetwork *net, char **out);

/**
 * # Safety
 * `net` must come from this library and not have been freed; NULL is a
 * no-op.
 */
void dnn_network_free(DnnNetwork *net);

/**
 * Input width, class count and hidden layer count.
 *
 * # Safety
 * `net` must be a live handle; the outputs must be writable.
 */
DnnStatus dnn_network_dims(const DnnNetwork *net,
                           size_t *input_dim,
                           size_t *classes,
                           size_t *hidden_layers);

/**
 * Softmax posteriors of one input vector into `out` (`out_len` = classes).
 *
 * # Safety
 * `x` must hold `len` values and `out` `out_len` writable values.
 */
DnnStatus dnn_network_posteriors(const DnnNetwork *net,
                                 const double *x,
                                 size_t len,
                                 double *out,
                                 size_t out_len);

/**
 * Most probable class of one input vector.
 *
 * # Safety
 * `x` must hold `len` values; `out` must be writable.
 */
DnnStatus dnn_network_predict(const DnnNetwork *net, const double *x, size_t len, size_t *out);

/**
 * Mean and max gain norm per hidden layer over `n_frames` row-major
 * frames of width `dim`. `mean_out` and `max_out` hold `n_layers` values
 * each, `n_layers` being the hidden layer count.
 *
 * # Safety
 * `frames` must hold `n_frames * dim` values; the outputs `n_layers`.
 */
DnnStatus dnn_network_gain_norms(const DnnNetwork *net,
                                 const double *frames,
                                 size_t n_frames,
                                 size_t dim,
                                 double *mean_out,
                                 double *max_out,
                                 size_t n_layers);

/**
 * Largest singular value of a row-major `rows × cols` matrix.
 *
 * # Safety
 * `data` must hold `rows * cols` values; `out` must be writable.
 */
DnnStatus dnn_spectral_norm(const double *data, size_t rows, size_t cols, double *out);

/**
 * `KL(p ‖ q)` in nats.
 *
 * # Safety
 * `p` and `q` must hold `n` values; `out` must be writable.
 */
DnnStatus dnn_kl_divergence(const double *p, const double *q, size_t n, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
DnnStatus dnn_transform_identity(size_t dim, DnnTransform **out);

/**
 * Transform from a row-major `dim × dim` matrix and a `dim` offset.
 *
 * # Safety
 * `a` must hold `dim * dim` values, `b` `dim`; `out` must be writable.
 */
DnnStatus dnn_transform_new(const double *a, const double *b, size_t dim, DnnTransform **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
DnnStatus dnn_transform_from_json(const char *json, DnnTransform **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
DnnStatus dnn_transform_load(const char *path, DnnTransform **out);

/**
 * # Safety
 * `t` must be a live handle; `out` must be writable.
 */
DnnStatus dnn_transform_dim(const DnnTransform *t, size_t *out);

/**
 * `out = A·frame + b`.
 *
 * # Safety
 * `frame` and `out` must each hold `len` values.
 */
DnnStatus dnn_transform_apply_frame(const DnnTransform *t,
                                    const double *frame,
                                    size_t len,
                                    double *out);

/**
 * # Safety
 * `t` must come from this library and not have been freed; NULL is a
 * no-op.
 */
void dnn_transform_free(DnnTransform *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DNNLAB_H */
