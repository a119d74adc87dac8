#ifndef FAIRMINE_H
#define FAIRMINE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FmStatus {
  FM_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  FM_STATUS_NULL_POINTER = 1,
  /**
   * Shares, protocol or experiment parameters were rejected.
   */
  FM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A numeric argument was outside its mathematical domain.
   */
  FM_STATUS_DOMAIN = 3,
  /**
   * An input exceeded a documented size limit.
   */
  FM_STATUS_UNSUPPORTED_SIZE = 4,
  /**
   * A numerical routine did not converge.
   */
  FM_STATUS_NO_CONVERGENCE = 5,
  /**
   * The caller's buffer is too small; the required size was reported.
   */
  FM_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * An internal panic was caught.
   */
  FM_STATUS_PANIC = 7,
} FmStatus;

/**
 * Protocol selector mirroring the core protocol kinds.
 */
typedef enum FmProtocol {
  FM_PROTOCOL_POW = 0,
  FM_PROTOCOL_MLPOS = 1,
  FM_PROTOCOL_SLPOS = 2,
  FM_PROTOCOL_FSLPOS = 3,
  FM_PROTOCOL_CPOS = 4,
} FmProtocol;

/**
 * Opaque experiment description.
 */
typedef struct FmExperiment FmExperiment;

/**
 * Opaque aggregated report.
 */
typedef struct FmReport FmReport;

typedef struct FmCheckpointStats {
  uint64_t t;
  double mean;
  /**
   * Standard error of the mean.
   */
  double std_error;
  double p05;
  double p95;
  double unfair_prob;
} FmCheckpointStats;

typedef struct FmBoundResult {
  bool satisfied;
  double lhs;
  double rhs;
  /**
   * False when no finite horizon satisfies the bound.
   */
  bool has_minimal_n;
  uint64_t minimal_n;
} FmBoundResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fm_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fm_version(void);

/**
 * Builds an experiment. `shares` are normalized if they do not sum to one.
 * `shards` and `inflation_reward` are only meaningful for C-PoS; pass 1 and 0
 * otherwise. Checkpoints default to {1,2,5}×10^j plus the horizon and the
 * fairness parameters to ε = δ = 0.1 for miner 0.
 *
 * # Safety
 * `shares` must point to `n_shares` doubles; `out` must be writable.
 */
enum FmStatus fm_experiment_new(enum FmProtocol protocol,
                                const double *shares,
                                size_t n_shares,
                                double proposer_reward,
                                double inflation_reward,
                                uint32_t shards,
                                uint64_t withhold_period,
                                uint64_t horizon,
                                size_t trials,
                                uint64_t base_seed,
                                struct FmExperiment **out);

/**
 * Sets ε, δ and the subject miner.
 *
 * # Safety
 * `exp` must be a live handle from [`fm_experiment_new`].
 */
enum FmStatus fm_experiment_set_fairness(struct FmExperiment *exp,
                                         double epsilon,
                                         double delta,
                                         size_t subject);

/**
 * Replaces the checkpoint list; it must be strictly increasing and end at the horizon.
 *
 * # Safety
 * `exp` must be a live handle; `checkpoints` must point to `n` values.
 */
enum FmStatus fm_experiment_set_checkpoints(struct FmExperiment *exp,
                                            const uint64_t *checkpoints,
                                            size_t n);

/**
 * # Safety
 * `exp` must be null or a handle not yet freed.
 */
void fm_experiment_free(struct FmExperiment *exp);

/**
 * Runs the experiment on `threads` workers (0 uses the default pool).
 *
 * # Safety
 * `exp` must be a live handle; `out` must be writable.
 */
enum FmStatus fm_experiment_run(const struct FmExperiment *exp,
                                uint32_t threads,
                                struct FmReport **out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void fm_report_free(struct FmReport *report);

/**
 * Number of checkpoints in a report (0 for a null handle).
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t fm_report_checkpoint_count(const struct FmReport *report);

/**
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum FmStatus fm_report_checkpoint(const struct FmReport *report,
                                   size_t index,
                                   struct FmCheckpointStats *out);

/**
 * Writes the convergence time to `out_t` and whether it exists to `out_converged`.
 *
 * # Safety
 * `report` must be a live handle; both outputs must be writable.
 */
enum FmStatus fm_report_convergence_time(const struct FmReport *report,
                                         bool *out_converged,
                                         uint64_t *out_t);

/**
 * Serializes a report as CSV (`format_json = false`) or JSON into `buf`.
 * `out_needed` (optional) receives the size including the NUL terminator.
 *
 * # Safety
 * `report` must be a live handle; `buf` must be null or hold `len` bytes.
 */
enum FmStatus fm_report_write(const struct FmReport *report,
                              bool format_json,
                              char *buf,
                              size_t len,
                              size_t *out_needed);

/**
 * Parses a JSON report previously produced by [`fm_report_write`].
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum FmStatus fm_report_from_json(const char *json, struct FmReport **out);

/**
 * Smallest horizon from which PoW is (ε, δ)-fair.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_pow_bound_n(double a, double epsilon, double delta, uint64_t *out);

/**
 * ML-PoS sufficiency check; `n = 0` means the limit n → ∞.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_mlpos_bound_check(uint64_t n,
                                   double proposer_reward,
                                   double a,
                                   double epsilon,
                                   double delta,
                                   struct FmBoundResult *out);

/**
 * C-PoS sufficiency check; `n = 0` means the limit n → ∞.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_cpos_bound_check(uint64_t n,
                                  double proposer_reward,
                                  double inflation_reward,
                                  uint32_t shards,
                                  double a,
                                  double epsilon,
                                  double delta,
                                  struct FmBoundResult *out);

/**
 * Exact PoW fair probability after `n` blocks.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_pow_fairness_exact(uint64_t n, double a, double epsilon, double *out);

/**
 * Limiting ML-PoS fair probability.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_mlpos_limit_fairness(double a,
                                      double proposer_reward,
                                      double epsilon,
                                      double *out);

/**
 * Regularized incomplete beta function `I_x(alpha, beta)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_reg_inc_beta(double x, double alpha, double beta, double *out);

/**
 * Two-miner SL-PoS drift at stake share `z`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FmStatus fm_drift(double z, double *out);

/**
 * Analytic SL-PoS win probabilities for `n` stakes (at most 64), written to
 * `out`, which must hold `n` doubles.
 *
 * # Safety
 * `stakes` and `out` must each point to `n` doubles.
 */
enum FmStatus fm_slpos_win_probs(const double *stakes, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRMINE_H */
