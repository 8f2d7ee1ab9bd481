#ifndef MODELRISK_H
#define MODELRISK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Return code of every `mr_*` function.
 */
typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_INPUT = 2,
  /**
   * Singular system, failed quadrature, no convergence, bad vol.
   */
  MR_STATUS_NUMERICAL = 3,
  MR_STATUS_GRID_MISMATCH = 4,
  MR_STATUS_IO = 5,
  MR_STATUS_PANIC = 6,
} MrStatus;

/**
 * Critical price per time node for a one-factor model.
 */
typedef struct MrBoundary1D MrBoundary1D;

/**
 * Critical price per time node and variance level under Heston.
 */
typedef struct MrBoundary2D MrBoundary2D;

/**
 * Calibrated local volatility plus the solver grid it lives on.
 */
typedef struct MrLocalVol MrLocalVol;

/**
 * Call quotes on a strike x maturity lattice.
 */
typedef struct MrQuotes MrQuotes;

/**
 * Heston coefficients, same meaning as in the Rust API.
 */
typedef struct MrHestonParams {
  double kappa;
  double theta;
  double sigma_v;
  double rho;
  double r;
  double s0;
  double v0;
} MrHestonParams;

/**
 * Summary of discounted payoffs from applying a rule to simulated paths.
 */
typedef struct MrPayoffStats {
  size_t n;
  double mean;
  double se;
  double median;
  double q3;
  double max;
  /**
   * Paths stopped before maturity.
   */
  size_t exercised;
} MrPayoffStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL,
 * or 0 when the last call succeeded. `buf` may be null to query the length.
 */
size_t mr_last_error_message(char *buf, size_t len);

/**
 * Static version string.
 */
const char *mr_version(void);

enum MrStatus mr_heston_base_case(struct MrHestonParams *out);

/**
 * European call at `t = 0` from `(s0, v0)`.
 */
enum MrStatus mr_heston_call_price(const struct MrHestonParams *params,
                                   double strike,
                                   double maturity,
                                   double *out);

/**
 * Black-Scholes implied volatility of a European call.
 */
enum MrStatus mr_implied_vol(double price,
                             double r,
                             double spot,
                             double strike,
                             double maturity,
                             double *out);

/**
 * Heston call quotes on every `(strike, maturity)` pair.
 */
enum MrStatus mr_quotes_from_heston(const struct MrHestonParams *params,
                                    const double *strikes,
                                    size_t n_strikes,
                                    const double *maturities,
                                    size_t n_maturities,
                                    struct MrQuotes **out);

enum MrStatus mr_quotes_len(const struct MrQuotes *quotes, size_t *out);

enum MrStatus mr_quotes_get(const struct MrQuotes *quotes,
                            size_t index,
                            double *strike,
                            double *maturity,
                            double *price);

void mr_quotes_free(struct MrQuotes *quotes);

/**
 * Implied volatility of the quote at `(ref_strike, ref_maturity)`.
 */
enum MrStatus mr_calibrate_bs(const struct MrQuotes *quotes,
                              double ref_strike,
                              double ref_maturity,
                              double *out);

/**
 * Local volatility fitted to the quotes on the default solver grid with
 * `n_time_steps` steps up to the last quoted maturity. `mean_rel_error`
 * may be null.
 */
enum MrStatus mr_calibrate_dupire(const struct MrQuotes *quotes,
                                  size_t n_time_steps,
                                  struct MrLocalVol **out,
                                  double *mean_rel_error);

enum MrStatus mr_local_vol_eval(const struct MrLocalVol *lv, double t, double s, double *out);

void mr_local_vol_free(struct MrLocalVol *lv);

/**
 * American put boundary under constant volatility.
 */
enum MrStatus mr_boundary_bs(double sigma,
                             double r,
                             double strike,
                             double maturity,
                             size_t n_time_steps,
                             struct MrBoundary1D **out);

/**
 * American put boundary under a calibrated local volatility, on the grid
 * the surface was fitted on.
 */
enum MrStatus mr_boundary_dupire(const struct MrLocalVol *lv,
                                 double r,
                                 double strike,
                                 double maturity,
                                 struct MrBoundary1D **out);

enum MrStatus mr_boundary_1d_eval(const struct MrBoundary1D *b, double t, double *out);

/**
 * Number of time nodes (time steps + 1).
 */
enum MrStatus mr_boundary_1d_len(const struct MrBoundary1D *b, size_t *out);

void mr_boundary_1d_free(struct MrBoundary1D *b);

/**
 * American put boundary under Heston on an `m1 x m2` grid with `m3`
 * time steps; the remaining grid settings are the defaults.
 */
enum MrStatus mr_boundary_heston(const struct MrHestonParams *params,
                                 double strike,
                                 double maturity,
                                 size_t m1,
                                 size_t m2,
                                 size_t m3,
                                 struct MrBoundary2D **out);

enum MrStatus mr_boundary_2d_eval(const struct MrBoundary2D *b, double t, double v, double *out);

enum MrStatus mr_boundary_2d_len(const struct MrBoundary2D *b, size_t *out);

void mr_boundary_2d_free(struct MrBoundary2D *b);

/**
 * Applies a one-factor rule to Heston paths simulated on the boundary's
 * time grid.
 */
enum MrStatus mr_apply_boundary_1d(const struct MrHestonParams *params,
                                   const struct MrBoundary1D *b,
                                   size_t n_paths,
                                   uint64_t seed,
                                   struct MrPayoffStats *out);

/**
 * Applies a Heston rule to Heston paths simulated on the boundary's time
 * grid.
 */
enum MrStatus mr_apply_boundary_2d(const struct MrHestonParams *params,
                                   const struct MrBoundary2D *b,
                                   size_t n_paths,
                                   uint64_t seed,
                                   struct MrPayoffStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODELRISK_H */
