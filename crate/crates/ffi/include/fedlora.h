#ifndef FEDLORA_H
#define FEDLORA_H

/* Generated by cbindgen from fedlora-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
enum FedloraStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  FEDLORA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FEDLORA_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FEDLORA_STATUS_INVALID_UTF8 = 2,
  /**
   * The config document failed to parse.
   */
  FEDLORA_STATUS_PARSE = 3,
  /**
   * The config parsed but failed validation.
   */
  FEDLORA_STATUS_INVALID_CONFIG = 4,
  /**
   * Local training produced non-finite values.
   */
  FEDLORA_STATUS_DIVERGENCE = 5,
  /**
   * A numeric routine failed (non-finite input, SVD stall, ...).
   */
  FEDLORA_STATUS_NUMERIC = 6,
  /**
   * Filesystem failure.
   */
  FEDLORA_STATUS_IO = 7,
  /**
   * An index was out of range.
   */
  FEDLORA_STATUS_OUT_OF_RANGE = 8,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum FedloraStatus FedloraStatus;
#else
typedef int32_t FedloraStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque experiment configuration handle.
 */
typedef struct FedloraConfig FedloraConfig;

/**
 * Opaque handle holding the metric series of one finished experiment.
 */
typedef struct FedloraRun FedloraRun;

/**
 * One metrics row, mirrored as plain C data.
 */
typedef struct FedloraRoundMetrics {
  size_t round;
  double global_loss;
  double global_grad_norm_sq;
  double trunc_bias_sq;
  double mean_trunc_err_sq;
  double weights_min;
  double weights_max;
  double wall_time_ms;
} FedloraRoundMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parse a JSON config document into a new handle.
 *
 * On success writes the handle to `out` and returns `FEDLORA_STATUS_OK`;
 * the caller owns the handle and must release it with
 * [`fedlora_config_free`].
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
FedloraStatus fedlora_config_parse(const char *json, struct FedloraConfig **out);

/**
 * Release a config handle. Null is accepted and ignored.
 *
 * # Safety
 * `cfg` must have come from [`fedlora_config_parse`] and not been freed.
 */
void fedlora_config_free(struct FedloraConfig *cfg);

/**
 * Override the aggregation strategy (`"zero_padding"`,
 * `"truncated_baseline"`, `"joint"` or `"fedhl"`).
 *
 * # Safety
 * `cfg` must be a live handle and `name` a valid NUL-terminated string.
 */
FedloraStatus fedlora_config_set_strategy(struct FedloraConfig *cfg, const char *name);

/**
 * Re-seed the experiment (both the training streams and the problem).
 *
 * # Safety
 * `cfg` must be a live handle.
 */
FedloraStatus fedlora_config_set_seed(struct FedloraConfig *cfg, uint64_t seed);

/**
 * Run the configured experiment to completion.
 *
 * On success writes a run handle holding `rounds + 1` metric records
 * (record 0 evaluates the initial model).
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
FedloraStatus fedlora_run(const struct FedloraConfig *cfg, struct FedloraRun **out);

/**
 * Release a run handle. Null is accepted and ignored.
 *
 * # Safety
 * `run` must have come from [`fedlora_run`] and not been freed.
 */
void fedlora_run_free(struct FedloraRun *run);

/**
 * Number of metric records in a finished run (`rounds + 1`).
 *
 * # Safety
 * `run` must be a live handle.
 */
size_t fedlora_run_num_records(const struct FedloraRun *run);

/**
 * Copy record `index` into `out`.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
FedloraStatus fedlora_run_record(const struct FedloraRun *run,
                                 size_t index,
                                 struct FedloraRoundMetrics *out);

/**
 * Write the run's metrics CSV (same schema and formatting as the CLI).
 *
 * # Safety
 * `run` must be a live handle and `path` a valid NUL-terminated string.
 */
FedloraStatus fedlora_run_write_csv(const struct FedloraRun *run, const char *path);

/**
 * Copy the most recent error message on this thread into `buf` (truncated
 * to `cap − 1` bytes, always NUL-terminated when `cap > 0`). Returns the
 * full message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be null.
 */
size_t fedlora_last_error_message(char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDLORA_H */
