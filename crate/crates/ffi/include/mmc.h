#ifndef MMC_H
#define MMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmcStatus {
  MMC_STATUS_OK = 0,
  MMC_STATUS_NULL_POINTER = 1,
  MMC_STATUS_INVALID_PARAMS = 2,
  MMC_STATUS_NON_POSITIVE_TIME = 3,
  MMC_STATUS_UNUSABLE_CHANNEL = 4,
  MMC_STATUS_SINGULAR_INNOVATION = 5,
  MMC_STATUS_UPDATE_WITHOUT_PREDICT = 6,
  MMC_STATUS_DEGENERATE_STATISTICS = 7,
  MMC_STATUS_CONFIG = 8,
  MMC_STATUS_BUFFER_TOO_SMALL = 9,
  MMC_STATUS_INVALID_ARGUMENT = 10,
  MMC_STATUS_INTERNAL = 11,
} MmcStatus;

typedef enum MmcObservationMode {
  MMC_OBSERVATION_MODE_FEEDBACK = 0,
  MMC_OBSERVATION_MODE_UPDATE = 1,
} MmcObservationMode;

/**
 * Position filter for the receiver.
 */
typedef struct MmcEkf MmcEkf;

/**
 * Physical parameters of the vessel, fluid and terminals.
 */
typedef struct MmcParams MmcParams;

typedef struct MmcOpCount {
  uint64_t mults;
  uint64_t adds;
} MmcOpCount;

typedef struct MmcSlotStatistics {
  double mu0;
  double var0;
  double mu1;
  double var1;
} MmcSlotStatistics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf` as a
 * NUL-terminated string, truncating to `cap - 1` bytes. Returns the full
 * message length in bytes (without the terminator).
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
uintptr_t mmc_last_error(char *buf, uintptr_t cap);

/**
 * Default parameter set.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum MmcStatus mmc_params_new_default(struct MmcParams **out);

/**
 * Parameters from TOML config text (only the `[physics]` table is used by
 * the handle; the whole document is validated).
 *
 * # Safety
 * `toml` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum MmcStatus mmc_params_from_toml(const char *toml, struct MmcParams **out);

/**
 * # Safety
 * `p` must be null or a handle from `mmc_params_*` not yet freed.
 */
void mmc_params_free(struct MmcParams *p);

/**
 * Bit interval `steps_per_bit * T` in seconds.
 *
 * # Safety
 * `p` must be a live params handle and `out` a valid pointer.
 */
enum MmcStatus mmc_params_bit_interval(const struct MmcParams *p, double *out);

/**
 * Cross-section averaged flow velocity (m/s).
 *
 * # Safety
 * `p` must be a live params handle and `out` a valid pointer.
 */
enum MmcStatus mmc_effective_velocity(const struct MmcParams *p, double *out);

/**
 * Axial flow velocity at radial offset `r_perp`.
 *
 * # Safety
 * `p` must be a live params handle and `out` a valid pointer.
 */
enum MmcStatus mmc_velocity_at(const struct MmcParams *p, double r_perp, double *out);

/**
 * Probability that one molecule is inside the receiver at time `t` when
 * the terminals are `d_x` apart.
 *
 * # Safety
 * `p` must be a live params handle and `out` a valid pointer.
 */
enum MmcStatus mmc_impulse_response(const struct MmcParams *p, double t, double d_x, double *out);

/**
 * Per-slot arrival probabilities `P_1, P_2, ...` at distance `d_x`.
 * The full length is always written to `len`; `BufferTooSmall` is
 * returned when it exceeds `cap`, with the first `cap` entries filled.
 *
 * # Safety
 * `p` must be a live params handle, `buf` null or valid for `cap`
 * writes, and `len` a valid pointer.
 */
enum MmcStatus mmc_arrival_probabilities(const struct MmcParams *p,
                                         double d_x,
                                         double *buf,
                                         uintptr_t cap,
                                         uintptr_t *len);

/**
 * Filter started at `initial` (3 doubles) with per-axis observation
 * noise `sigma_obs`, using the variance form of the process noise.
 *
 * # Safety
 * `p` must be a live params handle, `initial` valid for 3 reads and `out`
 * a valid pointer.
 */
enum MmcStatus mmc_ekf_new(const struct MmcParams *p,
                           const double *initial,
                           enum MmcObservationMode mode,
                           double sigma_obs,
                           struct MmcEkf **out);

/**
 * # Safety
 * `f` must be null or a handle from `mmc_ekf_new` not yet freed.
 */
void mmc_ekf_free(struct MmcEkf *f);

/**
 * # Safety
 * `f` must be a live filter handle.
 */
enum MmcStatus mmc_ekf_predict(struct MmcEkf *f);

/**
 * Corrects the prediction with observation `z` (3 doubles).
 *
 * # Safety
 * `f` must be a live filter handle and `z` valid for 3 reads.
 */
enum MmcStatus mmc_ekf_update(struct MmcEkf *f, const double *z);

/**
 * Writes the state estimate (3 doubles).
 *
 * # Safety
 * `f` must be a live filter handle and `out` valid for 3 writes.
 */
enum MmcStatus mmc_ekf_estimate(const struct MmcEkf *f, double *out);

/**
 * Writes the covariance row-major (9 doubles).
 *
 * # Safety
 * `f` must be a live filter handle and `out` valid for 9 writes.
 */
enum MmcStatus mmc_ekf_covariance(const struct MmcEkf *f, double *out);

/**
 * Cumulative operation counts: `phases` receives the five per-phase
 * counts in iteration order, `total` their sum. Either may be null.
 *
 * # Safety
 * `f` must be a live filter handle; `phases` null or valid for 5 writes,
 * `total` null or valid.
 */
enum MmcStatus mmc_ekf_op_counts(const struct MmcEkf *f,
                                 struct MmcOpCount *phases,
                                 struct MmcOpCount *total);

/**
 * Molecules to emit so the expected bit-1 count equals `target`, given the
 * last `n_emitted` emissions (oldest first) and `n_probs` slot
 * probabilities.
 *
 * # Safety
 * The arrays must be valid for their stated lengths (null allowed when
 * the length is zero); `out` must be valid.
 */
enum MmcStatus mmc_power_control(double target,
                                 const double *emitted,
                                 uintptr_t n_emitted,
                                 const double *probs,
                                 uintptr_t n_probs,
                                 double p_min,
                                 uint64_t *out);

/**
 * Receiver statistics averaged over equiprobable past bits.
 *
 * # Safety
 * The arrays must be valid for their stated lengths (null allowed when
 * the length is zero); `out` must be valid.
 */
enum MmcStatus mmc_slot_statistics(const double *levels,
                                   uintptr_t n_levels,
                                   double n_k,
                                   const double *probs,
                                   uintptr_t n_probs,
                                   double noise_scale,
                                   struct MmcSlotStatistics *out);

/**
 * Threshold minimizing the error probability of `stats`.
 *
 * # Safety
 * `stats` and `out` must be valid pointers.
 */
enum MmcStatus mmc_optimal_threshold(const struct MmcSlotStatistics *stats, double *out);

/**
 * Error probability of a threshold detector on `stats`.
 *
 * # Safety
 * `stats` and `out` must be valid pointers.
 */
enum MmcStatus mmc_error_probability(const struct MmcSlotStatistics *stats,
                                     double threshold,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMC_H */
