#ifndef SPLITLAB_H
#define SPLITLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum {
  SPL_STATUS_OK = 0,
  SPL_STATUS_NULL_POINTER = 1,
  SPL_STATUS_INVALID_SPLITTER = 2,
  SPL_STATUS_UNSUPPORTED_SPLITTER = 3,
  SPL_STATUS_INVALID_PARAMS = 4,
  SPL_STATUS_INVALID_ARGUMENT = 5,
  SPL_STATUS_TOO_LARGE = 6,
  SPL_STATUS_NUMERICAL = 7,
  SPL_STATUS_IO = 8,
  SPL_STATUS_PANIC = 9,
  SPL_STATUS_OTHER = 10,
} SplStatus;

// Opaque table of exact means E[P_n] and optionally E[W_n].
typedef struct SplMeanTable SplMeanTable;

// Opaque splitting distribution.
typedef struct SplSplitter SplSplitter;

// Split tree parameters (b, s, s0, s1).
typedef struct {
  uint32_t b;
  uint32_t s;
  uint32_t s0;
  uint32_t s1;
} SplParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last error on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *spl_last_error(void);

// Library version as a static NUL-terminated string.
const char *spl_version(void);

// Splitter by name ("bst", "bary", "median", "beta", "dirichlet").
// `b`, `k` and `beta` are ignored by families that do not use them;
// `alpha` may be NULL when `alpha_len` is 0.
//
// # Safety
// `name` must be a NUL-terminated string and `alpha` must point to
// `alpha_len` doubles.
SplStatus spl_splitter_new(const char *name,
                           uint32_t b,
                           uint32_t k,
                           const double *alpha,
                           uintptr_t alpha_len,
                           double beta,
                           SplSplitter **out);

// Uniform splitter of the binary search tree.
SplStatus spl_splitter_new_bst(SplSplitter **out);

// Median of 2k + 1 uniforms.
SplStatus spl_splitter_new_median(uint32_t k, SplSplitter **out);

// # Safety
// `splitter` must be NULL or a pointer returned by a `spl_splitter_new*`
// function that has not been freed.
void spl_splitter_free(SplSplitter *splitter);

// Branching factor of the splitter.
//
// # Safety
// `splitter` must be a live handle.
uint32_t spl_splitter_branching(const SplSplitter *splitter);

// Default parameters for the splitter's family.
//
// # Safety
// `splitter` must be a live handle and `out` writable.
SplStatus spl_params_default(const SplSplitter *splitter, SplParams *out);

// Writes 1/mu where mu = -b E[V ln V].
//
// # Safety
// `splitter` must be a live handle and `out` writable.
SplStatus spl_splitter_mu_inv(const SplSplitter *splitter, double *out);

// Simulates `reps` trees with `n` balls and writes the path length and
// Wiener index of each into `path_out` and `wiener_out` (as doubles).
// Either output may be NULL.
//
// # Safety
// Handles must be live; each non-NULL output must hold `reps` doubles.
SplStatus spl_simulate(const SplSplitter *splitter,
                       const SplParams *params,
                       uint64_t n,
                       uintptr_t reps,
                       uint64_t seed,
                       double *path_out,
                       double *wiener_out);

// Computes exact means for n = 0..=n_max.
//
// # Safety
// Handles must be live and `out` writable.
SplStatus spl_mean_table_new(const SplSplitter *splitter,
                             const SplParams *params,
                             uintptr_t n_max,
                             bool with_wiener,
                             SplMeanTable **out);

// # Safety
// `table` must be NULL or a live handle.
void spl_mean_table_free(SplMeanTable *table);

// Largest n in the table.
//
// # Safety
// `table` must be a live handle.
uintptr_t spl_mean_table_n_max(const SplMeanTable *table);

// E[P_n].
//
// # Safety
// `table` must be a live handle and `out` writable.
SplStatus spl_mean_table_path(const SplMeanTable *table, uintptr_t n, double *out);

// E[W_n]; fails with `InvalidArgument` when the table was built without it.
//
// # Safety
// `table` must be a live handle and `out` writable.
SplStatus spl_mean_table_wiener(const SplMeanTable *table, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLITLAB_H */
