#ifndef PROBIT_SUN_H
#define PROBIT_SUN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum PsunStatus {
  PSUN_STATUS_OK = 0,
  PSUN_STATUS_NULL_POINTER = 1,
  PSUN_STATUS_INVALID_ARGUMENT = 2,
  PSUN_STATUS_VALIDATION = 3,
  PSUN_STATUS_MATRIX = 4,
  PSUN_STATUS_NUMERIC = 5,
  PSUN_STATUS_IDENTIFIABILITY = 6,
  PSUN_STATUS_IO = 7,
  PSUN_STATUS_PANIC = 99,
} PsunStatus;

// Opaque exact-filter handle.
typedef struct PsunFilter PsunFilter;

// Opaque model handle.
typedef struct PsunModel PsunModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len - 1` bytes) and returns the full message length.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t psun_last_error(char *buf, size_t len);

// Scalar model `y_t = 1(f θ_t + ε_t > 0)`, `θ_t = g θ_{t-1} + η_t`.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum PsunStatus psun_model_scalar(size_t n,
                                  double a0,
                                  double p0,
                                  double w,
                                  double f,
                                  double g,
                                  double v,
                                  struct PsunModel **out);

// Model from a JSON configuration string (same schema as the command-line
// `--config` file; `n` is required and the fixed design is assumed).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum PsunStatus psun_model_from_json(const char *json, struct PsunModel **out);

// Horizon, state and response dimensions.
//
// # Safety
// `model` must come from a `psun_model_*` constructor; outputs may be null.
enum PsunStatus psun_model_dims(const struct PsunModel *model, size_t *n, size_t *p, size_t *m);

// Releases a model; null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void psun_model_free(struct PsunModel *model);

// `p(y_{1:n})` for `n·m` responses given row by row.
//
// # Safety
// `y` must hold `n·m` bytes; outputs must be valid (`std_error` may be null).
enum PsunStatus psun_marginal_likelihood(const struct PsunModel *model,
                                         const uint8_t *y,
                                         size_t len,
                                         uint64_t seed,
                                         double *value,
                                         double *std_error);

// Online exact filter over `model`; the model handle may be freed afterwards.
//
// # Safety
// `model` must be valid and `out` writable.
enum PsunStatus psun_filter_new(const struct PsunModel *model,
                                uint64_t seed,
                                struct PsunFilter **out);

// Releases a filter; null is ignored.
//
// # Safety
// `filter` must be null or a handle not yet freed.
void psun_filter_free(struct PsunFilter *filter);

// Number of observations absorbed so far.
//
// # Safety
// `filter` must be valid or null (returns 0).
size_t psun_filter_time(const struct PsunFilter *filter);

// Latent dimension of the current filtering distribution.
//
// # Safety
// `filter` must be valid or null (returns 0).
size_t psun_filter_latent_dim(const struct PsunFilter *filter);

// Absorbs `y_{t+1}` (`m` bytes in {0, 1}); writes `P(y_{t+1} | y_{1:t})`
// to `prob` unless it is null.
//
// # Safety
// `y` must hold `m` bytes.
enum PsunStatus psun_filter_step(struct PsunFilter *filter,
                                 const uint8_t *y,
                                 size_t m,
                                 double *prob);

// `P(y_{l,t+1} = 1 | y_{1:t})` for each of the `m` components.
//
// # Safety
// `out` must be writable for `m` doubles.
enum PsunStatus psun_filter_predict(struct PsunFilter *filter, double *out, size_t m);

// `r` i.i.d. draws of the current filtering distribution, row-major `r × p`.
//
// # Safety
// `out` must be writable for `len = r·p` doubles.
enum PsunStatus psun_filter_sample(const struct PsunFilter *filter,
                                   size_t r,
                                   uint64_t seed,
                                   double *out,
                                   size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBIT_SUN_H */
