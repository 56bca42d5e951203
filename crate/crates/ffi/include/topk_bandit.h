#ifndef TOPK_BANDIT_H
#define TOPK_BANDIT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirrored from the library's error type.
 */
typedef enum TkbStatus {
  TKB_STATUS_OK = 0,
  TKB_STATUS_NULL_POINTER = 1,
  TKB_STATUS_UTF8 = 2,
  TKB_STATUS_INVALID_INPUT = 3,
  TKB_STATUS_DEGENERATE_INPUT = 4,
  TKB_STATUS_PARSE = 5,
  TKB_STATUS_INFEASIBLE = 6,
  TKB_STATUS_END_OF_LOG = 7,
  TKB_STATUS_CONFIG = 8,
  TKB_STATUS_IO = 9,
  TKB_STATUS_OUT_OF_RANGE = 10,
  TKB_STATUS_INTERNAL = 11,
} TkbStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct TkbConfig TkbConfig;

/**
 * Opaque per-replicate metric series.
 */
typedef struct TkbSeries TkbSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread; valid until the next failing call.
 */
const char *tkb_last_error(void);

/**
 * A configuration with library defaults.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TkbStatus tkb_config_default(struct TkbConfig **out);

/**
 * Parse the flat `key = value` configuration text.
 *
 * # Safety
 * `text` must be NUL-terminated; `out` must be a valid pointer.
 */
enum TkbStatus tkb_config_parse(const char *text, struct TkbConfig **out);

/**
 * Apply one `key = value` assignment.
 *
 * # Safety
 * All pointers must be valid; strings NUL-terminated.
 */
enum TkbStatus tkb_config_set(struct TkbConfig *config, const char *key, const char *value);

/**
 * Validate without running.
 *
 * # Safety
 * `config` must be a live handle from this library.
 */
enum TkbStatus tkb_config_validate(const struct TkbConfig *config);

/**
 * # Safety
 * `config` must come from this library and not be freed twice.
 */
void tkb_config_free(struct TkbConfig *config);

/**
 * Run one replicate under the given seed.
 *
 * # Safety
 * `config` must be a live handle; `out` a valid pointer.
 */
enum TkbStatus tkb_run(const struct TkbConfig *config,
                       uint64_t seed,
                       uint64_t replicate,
                       struct TkbSeries **out);

/**
 * Number of recorded rounds.
 *
 * # Safety
 * `series` must be a live handle.
 */
uintptr_t tkb_series_len(const struct TkbSeries *series);

/**
 * Reward at a 0-based round index.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TkbStatus tkb_series_reward(const struct TkbSeries *series, uintptr_t index, double *out);

/**
 * Violation rate at a 0-based round index.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TkbStatus tkb_series_violation(const struct TkbSeries *series, uintptr_t index, double *out);

/**
 * Composite score of the chosen sample at a 0-based round index.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TkbStatus tkb_series_score(const struct TkbSeries *series, uintptr_t index, double *out);

/**
 * Chosen sampler at a 0-based round index: 0 solver, 1 wolpertinger,
 * 2 g2anet, 3 cem, 4 random, 5 tlbo.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TkbStatus tkb_series_sampler(const struct TkbSeries *series, uintptr_t index, int32_t *out);

/**
 * Mean reward over the whole series.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TkbStatus tkb_series_mean_reward(const struct TkbSeries *series, double *out);

/**
 * Mean violation rate over the whole series.
 *
 * # Safety
 * Pointers must be valid.
 */
enum TkbStatus tkb_series_mean_violation(const struct TkbSeries *series, double *out);

/**
 * Write the round-by-round CSV (`t,reward,violation_rate,chosen_sampler,score`).
 *
 * # Safety
 * `path` must be NUL-terminated; `series` a live handle.
 */
enum TkbStatus tkb_series_export_csv(const struct TkbSeries *series, const char *path);

/**
 * # Safety
 * `series` must come from this library and not be freed twice.
 */
void tkb_series_free(struct TkbSeries *series);

/**
 * Normalized edit distance between two nonnegative vectors of length `len`.
 *
 * # Safety
 * `u` and `v` must point to `len` readable doubles; `out` must be valid.
 */
enum TkbStatus tkb_ned(const double *u, const double *v, uintptr_t len, double *out);

/**
 * Count of diversity constraints induced by thresholding pairwise NED on a
 * row-major `l x d` feature matrix.
 *
 * # Safety
 * `features` must point to `l * d` readable doubles; `out` must be valid.
 */
enum TkbStatus tkb_constraint_count(const double *features,
                                    uintptr_t l,
                                    uintptr_t d,
                                    double tau,
                                    uintptr_t *out);

/**
 * Printable name of a sampler index, or NULL when out of range.
 */
const char *tkb_sampler_name(int32_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPK_BANDIT_H */
