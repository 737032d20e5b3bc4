#ifndef POINTSIM_H
#define POINTSIM_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result codes. Zero is success.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_SIZE_MISMATCH = 3,
  PS_STATUS_DEGENERATE_INPUT = 4,
  PS_STATUS_INVERTED = 5,
  PS_STATUS_SOLVER_FAILURE = 6,
  PS_STATUS_PANIC = 7,
} PsStatus;

// Per-point Lamé parameters.
typedef struct PsMaterial PsMaterial;

// Reference cloud with its stencils.
typedef struct PsReference PsReference;

// Backward-warp interpolator over a correspondence pair.
typedef struct PsWarp PsWarp;

// Outcome of an equilibrium solve.
typedef struct PsSolveInfo {
  double energy;
  double grad_norm;
  size_t iters;
  bool converged;
} PsSolveInfo;

// Distance statistics in millimetres.
typedef struct PsDistanceReport {
  double average_mm;
  double p95_mm;
  double max_mm;
} PsDistanceReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *ps_last_error(void);

// Builds stencils for `n` rest points. `surface_mask` may be null (no
// surface points) or hold `n` bytes, nonzero marking a surface point.
//
// # Safety
// `points_xyz` must hold `3 * n` doubles and `out` must be writable.
enum PsStatus ps_reference_new(const double *points_xyz,
                               size_t n,
                               double total_mass,
                               const uint8_t *surface_mask,
                               struct PsReference **out);

// # Safety
// `r` must be null or a handle from [`ps_reference_new`] not yet freed.
void ps_reference_free(struct PsReference *r);

// Number of points, or 0 for a null handle.
//
// # Safety
// `r` must be null or a live handle.
size_t ps_reference_len(const struct PsReference *r);

// Copies the per-point masses (kg) into `out_masses[n]`.
//
// # Safety
// `r` must be a live handle and `out_masses` must hold `n` doubles.
enum PsStatus ps_reference_masses(const struct PsReference *r, double *out_masses, size_t n);

// Per-point material from `mu[n]` and `lambda[n]` (Pa).
//
// # Safety
// Both arrays must hold `n` doubles and `out` must be writable.
enum PsStatus ps_material_new(const double *mu,
                              const double *lambda,
                              size_t n,
                              struct PsMaterial **out);

// # Safety
// `m` must be null or a handle from [`ps_material_new`] not yet freed.
void ps_material_free(struct PsMaterial *m);

// Elastic energy (J) of deformed positions `y[n]`. Inverted stencils give
// `+inf` with status `Ok`.
//
// # Safety
// Handles must be live, `y_xyz` must hold `3 * n` doubles and `out_energy`
// must be writable.
enum PsStatus ps_elastic_energy(const struct PsReference *r,
                                const struct PsMaterial *m,
                                const double *y_xyz,
                                size_t n,
                                double *out_energy);

// Static equilibrium under per-point forces `forces_xyz[n]` (may be null
// for none) with `n_pins` points `pin_ids` held at `pin_xyz`. Starts from
// `y_init_xyz` (null for the rest positions) and writes the result to
// `y_out_xyz[n]`. A solve that stops without converging still writes its
// last iterate and returns `SolverFailure`. Default solver settings apply.
//
// # Safety
// Handles must be live and every non-null array must have the stated size.
enum PsStatus ps_solve_equilibrium(const struct PsReference *r,
                                   const struct PsMaterial *m,
                                   size_t n,
                                   const double *forces_xyz,
                                   const size_t *pin_ids,
                                   const double *pin_xyz,
                                   size_t n_pins,
                                   const double *y_init_xyz,
                                   double *y_out_xyz,
                                   struct PsSolveInfo *out_info);

// Warp field from `n` corresponding rest/deformed points. `mask_radius <= 0`
// selects the default radius.
//
// # Safety
// Both arrays must hold `3 * n` doubles and `out` must be writable.
enum PsStatus ps_warp_new(const double *rest_xyz,
                          const double *deformed_xyz,
                          size_t n,
                          size_t k,
                          double mask_radius,
                          struct PsWarp **out);

// # Safety
// `w` must be null or a handle from [`ps_warp_new`] not yet freed.
void ps_warp_free(struct PsWarp *w);

// Maps `m` deformed-space points to rest space. `out_masked` may be null;
// otherwise it receives 1 for points outside the mask radius.
//
// # Safety
// `w` must be live, `query_xyz` and `out_xyz` must hold `3 * m` doubles and
// `out_masked`, if non-null, `m` bytes.
enum PsStatus ps_warp_backward(const struct PsWarp *w,
                               const double *query_xyz,
                               size_t m,
                               double *out_xyz,
                               uint8_t *out_masked);

// Distance statistics between `n_frames` simulated and observed frames of
// `n_points` points each, stored frame after frame. `mask` may be null to
// use every point.
//
// # Safety
// Both clouds must hold `3 * n_frames * n_points` doubles, `mask` (if
// non-null) `n_points` bytes, and `out` must be writable.
enum PsStatus ps_distance_report(const double *simulated_xyz,
                                 const double *observed_xyz,
                                 size_t n_frames,
                                 size_t n_points,
                                 const uint8_t *mask,
                                 struct PsDistanceReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTSIM_H */
