#ifndef CARDIOSEP_H
#define CARDIOSEP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_DIMENSION_MISMATCH = 3,
  CS_STATUS_NON_FINITE = 4,
  CS_STATUS_DEGENERATE = 5,
  CS_STATUS_DEPENDENT_REFERENCES = 6,
  CS_STATUS_BUFFER_TOO_SMALL = 7,
  CS_STATUS_INTERNAL = 99,
} CsStatus;

// Result of one factorization run.
typedef struct CsFactorization CsFactorization;

// Non-negative row-major matrix.
typedef struct CsMatrix CsMatrix;

typedef struct CsNmfConfig {
  double alpha;
  size_t rank;
  size_t max_iter;
  double rel_tol;
  double epsilon_floor;
  uint64_t seed;
} CsNmfConfig;

// Scores in dB; infinite when the matching error energy vanishes.
typedef struct CsBssScores {
  double sdr_db;
  double sir_db;
  double sar_db;
} CsBssScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the thread's last error message, NUL-terminated and truncated to
// `capacity`. Returns the full message length without the terminator.
//
// # Safety
// `buf` must be null or valid for `capacity` bytes.
size_t cs_last_error_message(char *buf, size_t capacity);

struct CsNmfConfig cs_nmf_config_default(void);

// Builds a `rows` x `cols` matrix from row-major `data`.
//
// # Safety
// `data` must be valid for `rows * cols` reads; `out` must be writable.
enum CsStatus cs_matrix_new(size_t rows, size_t cols, const double *data, struct CsMatrix **out);

// # Safety
// `m` must be null or a handle from this library not yet freed.
void cs_matrix_free(struct CsMatrix *m);

// # Safety
// `m` must be a live handle; `rows` and `cols` must be writable.
enum CsStatus cs_matrix_shape(const struct CsMatrix *m, size_t *rows, size_t *cols);

// Copies the row-major entries into `out`, which must hold `rows * cols`.
//
// # Safety
// `m` must be a live handle; `out` must be valid for `capacity` writes.
enum CsStatus cs_matrix_copy_data(const struct CsMatrix *m, double *out, size_t capacity);

// `D_alpha(Y || A X)` with `A X` floored at `epsilon_floor`.
//
// # Safety
// All handles must be live; `out` must be writable.
enum CsStatus cs_alpha_divergence(const struct CsMatrix *y,
                                  const struct CsMatrix *a,
                                  const struct CsMatrix *x,
                                  double alpha,
                                  double epsilon_floor,
                                  double *out);

// # Safety
// `y` must be a live handle, `config` readable and `out` writable.
enum CsStatus cs_factorize(const struct CsMatrix *y,
                           const struct CsNmfConfig *config,
                           struct CsFactorization **out);

// # Safety
// `f` must be null or a handle from this library not yet freed.
void cs_factorization_free(struct CsFactorization *f);

// New handle holding a copy of the basis `A`.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum CsStatus cs_factorization_basis(const struct CsFactorization *f, struct CsMatrix **out);

// New handle holding a copy of the activations `X`.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum CsStatus cs_factorization_activations(const struct CsFactorization *f, struct CsMatrix **out);

// Iteration count, convergence flag and cost trace length.
//
// # Safety
// `f` must be a live handle; the outputs must be writable.
enum CsStatus cs_factorization_summary(const struct CsFactorization *f,
                                       size_t *iterations,
                                       bool *converged,
                                       size_t *trace_len);

// # Safety
// `f` must be a live handle; `out` must be valid for `capacity` writes.
enum CsStatus cs_factorization_cost_trace(const struct CsFactorization *f,
                                          double *out,
                                          size_t capacity);

// Scores `estimate` against reference `target` of `n_refs` references
// stored back to back in `references`, each `len` samples long.
//
// # Safety
// `estimate` must be valid for `len` reads, `references` for
// `n_refs * len` reads, and `out` writable.
enum CsStatus cs_bss_eval(const double *estimate,
                          const double *references,
                          size_t len,
                          size_t n_refs,
                          size_t target,
                          struct CsBssScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARDIOSEP_H */
