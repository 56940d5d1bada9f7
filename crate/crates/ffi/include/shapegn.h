#ifndef SHAPEGN_H
#define SHAPEGN_H

#include <stddef.h>
#include <stdint.h>

// Result code of every entry point.
typedef enum SgnStatus {
  SGN_STATUS_OK = 0,
  SGN_STATUS_NULL_POINTER = 1,
  SGN_STATUS_INVALID_ARGUMENT = 2,
  SGN_STATUS_INVALID_SPEC = 3,
  SGN_STATUS_NON_FINITE = 4,
  SGN_STATUS_DEGENERATE_GRADIENT = 5,
  SGN_STATUS_RANK_DEFICIENT = 6,
  SGN_STATUS_SOLVER_BREAKDOWN = 7,
  SGN_STATUS_EMPTY_SURFACE = 8,
  SGN_STATUS_IO = 9,
  SGN_STATUS_PARSE = 10,
  SGN_STATUS_CONFIG = 11,
  SGN_STATUS_BUFFER_TOO_SMALL = 12,
  SGN_STATUS_PANIC = 13,
  SGN_STATUS_OTHER = 14,
} SgnStatus;

// Hidden-layer nonlinearity of [`sgn_field_new`].
typedef enum SgnActivation {
  SGN_ACTIVATION_TANH = 0,
  SGN_ACTIVATION_SINE = 1,
} SgnActivation;

// Linear solver of [`sgn_gn_direction`].
typedef enum SgnSolver {
  SGN_SOLVER_DENSE = 0,
  SGN_SOLVER_CONJUGATE_GRADIENT = 1,
  SGN_SOLVER_WOODBURY = 2,
} SgnSolver;

// Outcome of a run started with [`sgn_run_experiment`].
typedef enum SgnRunStatus {
  SGN_RUN_STATUS_COMPLETED = 0,
  SGN_RUN_STATUS_TIME_BUDGET = 1,
  SGN_RUN_STATUS_DIVERGED = 2,
  SGN_RUN_STATUS_FAILED = 3,
} SgnRunStatus;

// Opaque handle to a neural field.
typedef struct SgnField SgnField;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated, truncated
// to `len`). Returns the full message length in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t sgn_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *sgn_version(void);

// Create a deterministically initialized network with the given layer widths
// (first 3, last 1). `omega` is used only for the sine activation.
//
// # Safety
// `widths` must be valid for `n_widths` entries and `out` must be writable.
enum SgnStatus sgn_field_new(const size_t *widths,
                             size_t n_widths,
                             enum SgnActivation activation,
                             double omega,
                             uint64_t seed,
                             struct SgnField **out);

// Release a handle from [`sgn_field_new`]. Null is ignored.
//
// # Safety
// `field` must be null or a live handle that is not used afterwards.
void sgn_field_free(struct SgnField *field);

// Number of network parameters.
//
// # Safety
// `field` must be a live handle and `out` writable.
enum SgnStatus sgn_field_param_count(const struct SgnField *field, size_t *out);

// Copy the flattened parameters into `buf`; `len` must equal the parameter count.
//
// # Safety
// `field` must be a live handle and `buf` valid for `len` writes.
enum SgnStatus sgn_field_get_params(const struct SgnField *field, double *buf, size_t len);

// Replace the parameters from `buf`; `len` must equal the parameter count.
//
// # Safety
// `field` must be a live handle and `buf` valid for `len` reads.
enum SgnStatus sgn_field_set_params(struct SgnField *field, const double *buf, size_t len);

// Field value at `x[3]`.
//
// # Safety
// `field` must be a live handle, `x` valid for 3 reads and `out` writable.
enum SgnStatus sgn_field_eval(const struct SgnField *field, const double *x, double *out);

// Value, gradient (3) and row-major Hessian (9) at `x[3]`.
//
// # Safety
// `field` must be a live handle, `x` valid for 3 reads, `value` writable,
// `grad` valid for 3 writes and `hess` valid for 9 writes.
enum SgnStatus sgn_field_jet2(const struct SgnField *field,
                              const double *x,
                              double *value,
                              double *grad,
                              double *hess);

// One-sided chamfer `sqrt(mean over q of min over p of |q - p|^2)` for packed
// `xyz` point arrays.
//
// # Safety
// `p` must be valid for `3 * np` reads, `q` for `3 * nq` reads and `out` writable.
enum SgnStatus sgn_chamfer_one_sided(const double *p,
                                     size_t np,
                                     const double *q,
                                     size_t nq,
                                     double *out);

// Regularized Gauss-Newton direction `(JᵀJ + εI)⁻¹ Jᵀ r` for a row-major `J`
// (`rows × cols`). The update is `θ - η δ`. Writes `cols` values to `delta`.
//
// # Safety
// `j` must be valid for `rows * cols` reads, `r` for `rows` reads and
// `delta` for `cols` writes.
enum SgnStatus sgn_gn_direction(const double *j,
                                size_t rows,
                                size_t cols,
                                const double *r,
                                double epsilon,
                                enum SgnSolver solver,
                                double *delta);

// Run the experiment described by the TOML file at `config_path`.
//
// `run_status` receives the loop outcome and `final_loss` the last logged
// loss (NaN if none). The call itself returns `Ok` whenever the run started.
//
// # Safety
// `config_path` must be a NUL-terminated UTF-8 path; outputs must be writable.
enum SgnStatus sgn_run_experiment(const char *config_path,
                                  enum SgnRunStatus *run_status,
                                  double *final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPEGN_H */
