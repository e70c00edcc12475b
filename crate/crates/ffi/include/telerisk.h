#ifndef TELERISK_H
#define TELERISK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Values 2 to 4 match the CLI exit codes.
typedef enum TeleriskStatus {
  TELERISK_STATUS_OK = 0,
  TELERISK_STATUS_NULL_POINTER = 1,
  TELERISK_STATUS_CONFIG = 2,
  TELERISK_STATUS_DATA = 3,
  TELERISK_STATUS_NUMERICAL = 4,
  TELERISK_STATUS_BUFFER_TOO_SMALL = 5,
  TELERISK_STATUS_PANIC = 6,
} TeleriskStatus;

typedef enum TeleriskFamily {
  TELERISK_FAMILY_D4 = 0,
  TELERISK_FAMILY_HAAR = 1,
} TeleriskFamily;

typedef enum TeleriskRule {
  TELERISK_RULE_SIGNED_MAX_ABS = 0,
  TELERISK_RULE_MAX_ABS = 1,
  TELERISK_RULE_AVERAGE_ABS = 2,
} TeleriskRule;

// MODWT of one series.
typedef struct TeleriskDecomposition TeleriskDecomposition;

// Running Gamma posterior of one driver.
typedef struct TeleriskDriverPosterior TeleriskDriverPosterior;

// Fitted severity mixture.
typedef struct TeleriskSeverityModel TeleriskSeverityModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the previous call on this thread if it failed, else null.
// The pointer stays valid until the next call on the same thread.
const char *telerisk_last_error(void);

// Library version as a static NUL-terminated string.
const char *telerisk_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library and not yet freed.
void telerisk_string_free(char *s);

// MODWT of `samples` to depth `levels`.
//
// # Safety
// `samples` must be valid for `len` reads and `out` for one write.
enum TeleriskStatus telerisk_modwt_forward(const double *samples,
                                           size_t len,
                                           size_t levels,
                                           enum TeleriskFamily family,
                                           struct TeleriskDecomposition **out);

// Series length of a decomposition, 0 for null.
//
// # Safety
// `d` must be null or a live decomposition handle.
size_t telerisk_decomposition_len(const struct TeleriskDecomposition *d);

// Depth of a decomposition, 0 for null.
//
// # Safety
// `d` must be null or a live decomposition handle.
size_t telerisk_decomposition_levels(const struct TeleriskDecomposition *d);

// Copies level `level` (1-based) into `out`; level 0 selects the scaling
// coefficients.
//
// # Safety
// `d` must be a live handle and `out` valid for `cap` writes.
enum TeleriskStatus telerisk_decomposition_level(const struct TeleriskDecomposition *d,
                                                 size_t level,
                                                 double *out,
                                                 size_t cap);

// Inverse transform into `out`.
//
// # Safety
// `d` must be a live handle and `out` valid for `cap` writes.
enum TeleriskStatus telerisk_decomposition_inverse(const struct TeleriskDecomposition *d,
                                                   double *out,
                                                   size_t cap);

// Aggregates all levels with `rule` into `out`.
//
// # Safety
// `d` must be a live handle and `out` valid for `cap` writes.
enum TeleriskStatus telerisk_decomposition_aggregate(const struct TeleriskDecomposition *d,
                                                     enum TeleriskRule rule,
                                                     double *out,
                                                     size_t cap);

// # Safety
// `d` must be null or a handle not yet freed.
void telerisk_decomposition_free(struct TeleriskDecomposition *d);

// Fits a mixture with `g` Gaussians and `m_left`/`m_right` layers by the
// full candidate search. `q` and `p` size the endpoint grids.
//
// # Safety
// `data` must be valid for `n` reads and `out` for one write.
enum TeleriskStatus telerisk_severity_fit(const double *data,
                                          size_t n,
                                          size_t g,
                                          size_t m_left,
                                          size_t m_right,
                                          double alpha,
                                          size_t q,
                                          size_t p,
                                          uint64_t seed,
                                          struct TeleriskSeverityModel **out);

// Loads a model from the JSON written by `telerisk fit` (model.json).
//
// # Safety
// `json` must be a NUL-terminated string and `out` valid for one write.
enum TeleriskStatus telerisk_severity_model_from_json(const char *json,
                                                      struct TeleriskSeverityModel **out);

// Serializes a model; release the result with `telerisk_string_free`.
//
// # Safety
// `m` must be a live handle and `out` valid for one write.
enum TeleriskStatus telerisk_severity_model_to_json(const struct TeleriskSeverityModel *m,
                                                    char **out);

// Number of tail layers M, 0 for null.
//
// # Safety
// `m` must be null or a live handle.
size_t telerisk_severity_layer_count(const struct TeleriskSeverityModel *m);

// Log-likelihood of the fitted model, NaN for null.
//
// # Safety
// `m` must be null or a live handle.
double telerisk_severity_loglik(const struct TeleriskSeverityModel *m);

// Layer probabilities in layer order: left layers deepest first, then
// right layers from the bulk outward.
//
// # Safety
// `m` must be a live handle and `out` valid for `cap` writes.
enum TeleriskStatus telerisk_severity_layer_probabilities(const struct TeleriskSeverityModel *m,
                                                          double *out,
                                                          size_t cap);

// Multi-layer tail counts of the retained positions of one trip. Writes
// one count per layer to `counts` and the exposure to `exposure`.
//
// # Safety
// `values` must be valid for `len` reads, `retained` for `n_retained`
// reads, `counts` for `cap` writes and `exposure` for one write.
enum TeleriskStatus telerisk_severity_mltc(const struct TeleriskSeverityModel *m,
                                           const double *values,
                                           size_t len,
                                           const size_t *retained,
                                           size_t n_retained,
                                           uint64_t *counts,
                                           size_t cap,
                                           uint64_t *exposure);

// # Safety
// `m` must be null or a handle not yet freed.
void telerisk_severity_model_free(struct TeleriskSeverityModel *m);

// Severity weights proportional to `pis[k]^(-gamma)`, normalized.
//
// # Safety
// `pis` must be valid for `m` reads and `out` for `m` writes.
enum TeleriskStatus telerisk_severity_weights(const double *pis,
                                              size_t m,
                                              double gamma,
                                              double *out);

// Trip risk index under the Gamma prior (`alpha`, `beta`).
//
// # Safety
// `alpha`, `beta`, `counts` and `weights` must each be valid for `m`
// reads and `out` for one write.
enum TeleriskStatus telerisk_trip_index(const double *alpha,
                                        const double *beta,
                                        const double *weights,
                                        const uint64_t *counts,
                                        size_t m,
                                        uint64_t exposure,
                                        double *out);

// New driver posterior at the prior (`alpha`, `beta`).
//
// # Safety
// `alpha` and `beta` must be valid for `m` reads and `out` for one write.
enum TeleriskStatus telerisk_driver_posterior_new(const double *alpha,
                                                  const double *beta,
                                                  size_t m,
                                                  struct TeleriskDriverPosterior **out);

// Adds one trip's counts and exposure.
//
// # Safety
// `d` must be a live handle and `counts` valid for `m` reads.
enum TeleriskStatus telerisk_driver_posterior_update(struct TeleriskDriverPosterior *d,
                                                     const uint64_t *counts,
                                                     size_t m,
                                                     uint64_t exposure);

// Posterior mean intensity of each layer into `out`.
//
// # Safety
// `d` must be a live handle and `out` valid for `cap` writes.
enum TeleriskStatus telerisk_driver_posterior_means(const struct TeleriskDriverPosterior *d,
                                                    double *out,
                                                    size_t cap);

// Driver risk index after the trips seen so far.
//
// # Safety
// `d` must be a live handle, `weights` valid for `m` reads and `out` for
// one write.
enum TeleriskStatus telerisk_driver_posterior_index(const struct TeleriskDriverPosterior *d,
                                                    const double *weights,
                                                    size_t m,
                                                    double *out);

// # Safety
// `d` must be null or a handle not yet freed.
void telerisk_driver_posterior_free(struct TeleriskDriverPosterior *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TELERISK_H */
