#ifndef SPO_FFI_H
#define SPO_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpoStatus {
  SPO_STATUS_OK = 0,
  SPO_STATUS_NULL_POINTER = 1,
  SPO_STATUS_INVALID_INPUT = 2,
  SPO_STATUS_DIMENSION_MISMATCH = 3,
  SPO_STATUS_NON_FINITE = 4,
  SPO_STATUS_CONFIG = 5,
  SPO_STATUS_IO = 6,
  SPO_STATUS_BUFFER_TOO_SMALL = 7,
  SPO_STATUS_INTERNAL = 8,
  SPO_STATUS_PANIC = 9,
} SpoStatus;

/**
 * A finished experiment: summary and acceptance verdict.
 */
typedef struct SpoExperiment SpoExperiment;

/**
 * Anti-symmetric preference matrix.
 */
typedef struct SpoMatrix SpoMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (empty after a success).
 * Returns the number of bytes needed including the terminator; writes
 * nothing when `cap` is too small.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t spo_last_error_message(char *buf, size_t cap);

/**
 * Builds a matrix from `n * n` row-major entries. Anti-symmetry is checked.
 *
 * # Safety
 * `entries` must point to `n * n` doubles; `out` must be writable.
 */
enum SpoStatus spo_matrix_new(const double *entries, size_t n, struct SpoMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from [`spo_matrix_new`] not yet freed.
 */
void spo_matrix_free(struct SpoMatrix *m);

/**
 * Number of options, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t spo_matrix_size(const struct SpoMatrix *m);

/**
 * Exact minimax winner: writes the strategy (length `n`), the game value
 * and the strategy's exploitability.
 *
 * # Safety
 * `m` must be a live handle, `strategy` must hold `len` doubles, and the
 * scalar outputs must be null or writable.
 */
enum SpoStatus spo_minimax_winner(const struct SpoMatrix *m,
                                  double *strategy,
                                  size_t len,
                                  double *value,
                                  double *exploit);

/**
 * `2 max_i (P p)_i` for a probability vector `p`.
 *
 * # Safety
 * `m` must be a live handle, `p` must hold `len` doubles, `out` writable.
 */
enum SpoStatus spo_exploitability(const struct SpoMatrix *m,
                                  const double *p,
                                  size_t len,
                                  double *out);

/**
 * Full-feedback Hedge self-play for `rounds` rounds. A non-positive `eta`
 * selects `sqrt(8 ln n / T)`. Writes the average strategy and, when
 * non-null, the learner's realized regret.
 *
 * # Safety
 * `m` must be a live handle, `average` must hold `len` doubles, `regret`
 * must be null or writable.
 */
enum SpoStatus spo_selfplay_hedge(const struct SpoMatrix *m,
                                  uint64_t rounds,
                                  double eta,
                                  double *average,
                                  size_t len,
                                  double *regret);

/**
 * Runs the experiment described by a TOML document (same format as
 * `spo-lab run --config`), writing its CSVs and summary. A failed
 * acceptance check is not an error; query it with
 * [`spo_experiment_passed`].
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SpoStatus spo_experiment_run(const char *toml, struct SpoExperiment **out);

/**
 * 1 if the scenario's acceptance check passed, 0 if not, -1 for null.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
int spo_experiment_passed(const struct SpoExperiment *e);

/**
 * Copies the JSON summary into `buf`; `needed` receives the size required.
 *
 * # Safety
 * `e` must be a live handle; `buf` null or `cap` writable bytes; `needed`
 * null or writable.
 */
enum SpoStatus spo_experiment_summary_json(const struct SpoExperiment *e,
                                           char *buf,
                                           size_t cap,
                                           size_t *needed);

/**
 * # Safety
 * `e` must be null or a handle from [`spo_experiment_run`] not yet freed.
 */
void spo_experiment_free(struct SpoExperiment *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPO_FFI_H */
