#ifndef SEQMETRO_H
#define SEQMETRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_PARSE = 3,
  SM_STATUS_NOT_CPTP = 4,
  SM_STATUS_NON_ERGODIC = 5,
  SM_STATUS_NOT_MIXING = 6,
  SM_STATUS_CAP_EXCEEDED = 7,
  SM_STATUS_NUMERICAL = 8,
  SM_STATUS_BUFFER_TOO_SMALL = 9,
  SM_STATUS_PANIC = 10,
} SmStatus;

/*
 Instrument plus the initial state used for sampling.
 */
typedef struct SmInstrument SmInstrument;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *sm_version(void);

/*
 Copies the calling thread's last error message into `buf` (NUL
 terminated, truncated to `len - 1` bytes). Returns the full message
 length in bytes, excluding the terminator.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t sm_last_error_message(char *buf, size_t len);

/*
 Qubit thermometer instrument (weak σ_z measurement of strength `eta`
 followed by thermalization for time `tau`). Sampling starts from `|↓⟩`.

 # Safety
 `out` must be valid for writing one pointer.
 */
enum SmStatus sm_instrument_thermometer(double gamma,
                                        double gamma_beta,
                                        double omega,
                                        double tau,
                                        double eta,
                                        struct SmInstrument **out);

/*
 Instrument from a JSON model document. Sampling starts from the model's
 `initial_state`, or from the fixed point when it is absent.

 # Safety
 `json` must be a NUL-terminated string; `out` must be valid for writing.
 */
enum SmStatus sm_instrument_from_json(const char *json, struct SmInstrument **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `p` must be null or a handle from this library not yet freed.
 */
void sm_instrument_free(struct SmInstrument *p);

/*
 Hilbert-space dimension.

 # Safety
 `p` must be a live handle; `out` valid for writing.
 */
enum SmStatus sm_instrument_dim(const struct SmInstrument *p, size_t *out);

/*
 Stationary mean `⟨S⟩*`.

 # Safety
 `p` must be a live handle; `out` valid for writing.
 */
enum SmStatus sm_stationary_mean(const struct SmInstrument *p, double *out);

/*
 Asymptotic variance `σ² = lim N Var(S)`; requires a mixing channel.

 # Safety
 `p` must be a live handle; `out` valid for writing.
 */
enum SmStatus sm_sigma2(const struct SmInstrument *p, double *out);

/*
 Asymptotic covariance of `(S, C_1..C_L)`, `(L+1)²` values row-major.

 # Safety
 `p` must be a live handle; `out` valid for `len` doubles.
 */
enum SmStatus sm_covariance_matrix(const struct SmInstrument *p, size_t l, double *out, size_t len);

/*
 One simulated record of length `n`, reduced to `(S, C_1..C_L)`.

 # Safety
 `p` must be a live handle; `out` valid for `len` doubles.
 */
enum SmStatus sm_sample_statistics(const struct SmInstrument *p,
                                   size_t n,
                                   size_t l,
                                   uint64_t seed,
                                   double *out,
                                   size_t len);

/*
 `batch` records; row `i` is `(S, C_1..C_L)` of trajectory `i`, using
 the same per-index seeds as the command-line tool.

 # Safety
 `p` must be a live handle; `out` valid for `len` doubles.
 */
enum SmStatus sm_sample_batch(const struct SmInstrument *p,
                              size_t n,
                              size_t l,
                              size_t batch,
                              uint64_t seed,
                              double *out,
                              size_t len);

/*
 Thermometer Fisher information per measurement with respect to `γβ`.
 Writes `F_0/N .. F_L/N` of the sequential strategy, then the standard
 strategy `F` and the quantum bound `F_Q`: `L + 3` values.

 # Safety
 `out` must be valid for `len` doubles.
 */
enum SmStatus sm_thermometer_fisher(double gamma,
                                    double gamma_beta,
                                    double omega,
                                    double tau,
                                    double eta,
                                    size_t l,
                                    double *out,
                                    size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQMETRO_H */
