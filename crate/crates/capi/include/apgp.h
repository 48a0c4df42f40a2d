#ifndef APGP_H
#define APGP_H

/* Generated by cbindgen. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Kernel families exposed through the C API.
 */
typedef enum ApgpKernelFamily {
  APGP_KERNEL_FAMILY_MATERN52 = 0,
  APGP_KERNEL_FAMILY_MATERN32 = 1,
  APGP_KERNEL_FAMILY_RBF = 2,
} ApgpKernelFamily;

/**
 * Block selection rules for the alternating-projection solver.
 */
typedef enum ApgpSelectionRule {
  APGP_SELECTION_RULE_GAUSS_SOUTHWELL = 0,
  APGP_SELECTION_RULE_CYCLIC = 1,
  APGP_SELECTION_RULE_RANDOM = 2,
} ApgpSelectionRule;

/**
 * Which solver backs a training or prediction call.
 */
typedef enum ApgpSolverMethod {
  /**
   * Alternating projection; `batch_size` selects the block size.
   */
  APGP_SOLVER_METHOD_ALTERNATING_PROJECTION = 0,
  /**
   * Preconditioned conjugate gradients; `preconditioner_rank` sizes the
   * pivoted Cholesky preconditioner (0 disables it).
   */
  APGP_SOLVER_METHOD_CONJUGATE_GRADIENTS = 1,
} ApgpSolverMethod;

/**
 * Status code returned by every fallible function.
 */
typedef enum ApgpStatus {
  APGP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  APGP_STATUS_NULL_POINTER = 1,
  /**
   * Invalid sizes, non-finite inputs, or malformed arguments.
   */
  APGP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A matrix that must be positive definite was not.
   */
  APGP_STATUS_NUMERICAL_FAILURE = 3,
  /**
   * An iterative solver diverged or broke down.
   */
  APGP_STATUS_SOLVER_FAILURE = 4,
  /**
   * The callee panicked; the handle state is unspecified.
   */
  APGP_STATUS_PANIC = 5,
} ApgpStatus;

/**
 * Opaque Gaussian-process handle owning a copy of the training data.
 */
typedef struct ApgpGp ApgpGp;

/**
 * Opaque kernel specification handle.
 */
typedef struct ApgpSpec ApgpSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a NUL-terminated static string.
 */
const char *apgp_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing apgp call on the same thread.
 */
const char *apgp_last_error_message(void);

/**
 * Create a kernel specification.
 *
 * `lengthscales` holds `num_dims` positive ARD lengthscales. On success
 * `*out` owns the new handle; release it with [`apgp_spec_free`].
 *
 * # Safety
 * `lengthscales` must point to `num_dims` doubles and `out` must be a
 * valid destination pointer.
 */
enum ApgpStatus apgp_spec_new(enum ApgpKernelFamily family,
                              const double *lengthscales,
                              size_t num_dims,
                              double outputscale,
                              double noise_variance,
                              double mean_constant,
                              struct ApgpSpec **out);

/**
 * Release a spec handle. Null is a no-op.
 *
 * # Safety
 * `spec` must be null or a pointer returned by [`apgp_spec_new`] that has
 * not been freed yet.
 */
void apgp_spec_free(struct ApgpSpec *spec);

/**
 * Solve `K W = B` by alternating projection.
 *
 * `x` is the `n x d` input matrix, `b` the `n x ncols` right-hand sides,
 * `batch_size` the partition block size, `seed` the stream for the random
 * rule. `out_weights` receives the `n x ncols` solution; `out_epochs` and
 * `out_avg_rel_residual` (optional, may be null) receive the epoch count
 * and the final average relative residual.
 *
 * # Safety
 * Pointers must reference buffers of the documented sizes.
 */
enum ApgpStatus apgp_ap_solve(const struct ApgpSpec *spec,
                              const double *x,
                              size_t n,
                              size_t d,
                              const double *b,
                              size_t ncols,
                              size_t batch_size,
                              enum ApgpSelectionRule rule,
                              uint64_t seed,
                              double tolerance,
                              size_t min_epochs,
                              size_t max_epochs,
                              double *out_weights,
                              size_t *out_epochs,
                              double *out_avg_rel_residual);

/**
 * Solve `K W = B` by (preconditioned) conjugate gradients.
 * `preconditioner_rank` = 0 runs plain CG.
 *
 * # Safety
 * Pointers must reference buffers of the documented sizes.
 */
enum ApgpStatus apgp_cg_solve(const struct ApgpSpec *spec,
                              const double *x,
                              size_t n,
                              size_t d,
                              const double *b,
                              size_t ncols,
                              size_t preconditioner_rank,
                              double tolerance,
                              size_t min_iters,
                              size_t max_iters,
                              double *out_weights,
                              size_t *out_iters,
                              double *out_avg_rel_residual);

/**
 * Create a GP handle owning copies of the training inputs (`n x d`,
 * row-major) and labels (`n`), starting from `spec`'s hyperparameters.
 *
 * # Safety
 * `x` must hold `n * d` doubles, `y` must hold `n`, and `out` must be a
 * valid destination pointer.
 */
enum ApgpStatus apgp_gp_new(const double *x,
                            size_t n,
                            size_t d,
                            const double *y,
                            const struct ApgpSpec *spec,
                            struct ApgpGp **out);

/**
 * Release a GP handle. Null is a no-op.
 *
 * # Safety
 * `gp` must be null or an unfreed pointer from [`apgp_gp_new`].
 */
void apgp_gp_free(struct ApgpGp *gp);

/**
 * Train the GP hyperparameters in place with Adam on stochastic MLL
 * gradients (Rademacher probes).
 *
 * # Safety
 * `gp` must be a live handle from [`apgp_gp_new`].
 */
enum ApgpStatus apgp_gp_train(struct ApgpGp *gp,
                              enum ApgpSolverMethod method,
                              size_t batch_size,
                              size_t preconditioner_rank,
                              size_t adam_steps,
                              double step_size,
                              size_t num_probes,
                              double noise_floor,
                              uint64_t seed,
                              double tolerance,
                              size_t min_epochs,
                              size_t max_epochs);

/**
 * Read the current hyperparameters out of a GP handle. `lengthscales`
 * must hold `d` doubles; scalar outputs may be null to skip them.
 *
 * # Safety
 * `gp` must be a live handle; `lengthscales`, when non-null, must hold
 * `d` doubles.
 */
enum ApgpStatus apgp_gp_hyperparameters(const struct ApgpGp *gp,
                                        double *lengthscales,
                                        double *outputscale,
                                        double *noise_variance,
                                        double *mean_constant);

/**
 * Posterior mean at `m` test points (`x_test` is `m x d`, row-major);
 * `out_means` receives `m` doubles.
 *
 * # Safety
 * Pointers must reference buffers of the documented sizes.
 */
enum ApgpStatus apgp_gp_predict_mean(const struct ApgpGp *gp,
                                     const double *x_test,
                                     size_t m,
                                     enum ApgpSolverMethod method,
                                     size_t batch_size,
                                     size_t preconditioner_rank,
                                     double tolerance,
                                     size_t min_epochs,
                                     size_t max_epochs,
                                     double *out_means);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APGP_H */
