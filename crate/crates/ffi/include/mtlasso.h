#ifndef MTLASSO_H
#define MTLASSO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MTL_SOLVER_AS_SSNPAL 0

#define MTL_SOLVER_SSNPAL 1

#define MTL_SOLVER_AS_ADMM 2

#define MTL_SOLVER_ADMM 3

// Outcome codes shared by every entry point.
typedef enum MtlStatus {
  MTL_STATUS_OK = 0,
  MTL_STATUS_NULL_POINTER = 1,
  MTL_STATUS_INVALID_INPUT = 2,
  MTL_STATUS_DIMENSION_MISMATCH = 3,
  MTL_STATUS_NUMERICAL = 4,
  MTL_STATUS_IO = 5,
  MTL_STATUS_PANIC = 6,
} MtlStatus;

// Termination of a solve, as reported by `mtl_solution_status`.
typedef enum MtlSolveStatus {
  MTL_SOLVE_STATUS_CONVERGED = 0,
  MTL_SOLVE_STATUS_ITER_CAP = 1,
  MTL_SOLVE_STATUS_TIME_CAP = 2,
  MTL_SOLVE_STATUS_FAILED = 3,
} MtlSolveStatus;

// Opaque problem handle.
typedef struct MtlProblem MtlProblem;

// Opaque solution handle for one radius.
typedef struct MtlSolution MtlSolution;

// Solver limits; zero fields select the defaults.
typedef struct MtlOptions {
  // Outer iteration cap (0: solver default).
  size_t max_iter;
  // Wall-clock budget in seconds (0: 7200).
  double time_limit_s;
  // Sieving bound (0: the tolerance).
  double eps;
} MtlOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
size_t mtl_last_error(char *buf, size_t len);

// Builds a problem from `n` task blocks stacked vertically.
//
// `x` holds `sum(m_sizes)` rows of `d` features in row-major order and `y`
// the stacked responses.
enum MtlStatus mtl_problem_new(size_t d,
                               size_t n,
                               const size_t *m_sizes,
                               const double *x,
                               const double *y,
                               struct MtlProblem **out);

// Draws the synthetic benchmark instance with `20 * scale` tasks.
enum MtlStatus mtl_problem_synthetic(size_t scale, uint64_t seed, struct MtlProblem **out);

void mtl_problem_free(struct MtlProblem *problem);

// Writes the feature count, task count and total sample count.
enum MtlStatus mtl_problem_dims(const struct MtlProblem *problem, size_t *d, size_t *n, size_t *m);

// Euclidean projection of the `d x n` matrix `q` onto the l1,inf ball of
// radius `gamma`. `out` may alias `q`; `theta` (nullable) receives the
// multiplier.
enum MtlStatus mtl_project(const double *q,
                           size_t d,
                           size_t n,
                           double gamma,
                           double *out,
                           double *theta);

// Solves one radius from the zero start.
enum MtlStatus mtl_solve(const struct MtlProblem *problem,
                         int solver,
                         double gamma,
                         double tol,
                         const struct MtlOptions *options,
                         struct MtlSolution **out);

// Solves an increasing grid of `count` radii with warm starts, writing one
// handle per radius into `out`. Entries past a path abort are set to null.
enum MtlStatus mtl_path(const struct MtlProblem *problem,
                        int solver,
                        const double *gammas,
                        size_t count,
                        double tol,
                        const struct MtlOptions *options,
                        struct MtlSolution **out);

void mtl_solution_free(struct MtlSolution *solution);

// Termination status, or `Failed` for a null handle.
enum MtlSolveStatus mtl_solution_status(const struct MtlSolution *solution);

// Relative KKT residual of the returned triple, NaN for a null handle.
double mtl_solution_residual(const struct MtlSolution *solution);

// Iteration counts, active-set size and wall time; null outputs are skipped.
enum MtlStatus mtl_solution_stats(const struct MtlSolution *solution,
                                  size_t *outer,
                                  size_t *inner,
                                  size_t *rounds,
                                  size_t *active,
                                  double *time_s);

// Copies `W`, `Z` or `U` (`which` = 0, 1, 2) into `buf` of `len >= d * n`.
enum MtlStatus mtl_solution_matrix(const struct MtlSolution *solution,
                                   int which,
                                   double *buf,
                                   size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTLASSO_H */
