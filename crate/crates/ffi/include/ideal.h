#ifndef IDEAL_H
#define IDEAL_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum IdealStatus {
  IDEAL_STATUS_OK = 0,
  IDEAL_STATUS_NULL_POINTER = 1,
  IDEAL_STATUS_INVALID_STRING = 2,
  IDEAL_STATUS_CONFIG = 3,
  IDEAL_STATUS_USAGE = 4,
  IDEAL_STATUS_SHAPE = 5,
  IDEAL_STATUS_NUMERIC = 6,
  IDEAL_STATUS_DEGENERATE_VECTOR = 7,
  IDEAL_STATUS_UNKNOWN_ID = 8,
  IDEAL_STATUS_POOL_EXHAUSTED = 9,
  IDEAL_STATUS_PARSE = 10,
  IDEAL_STATUS_INTEGRITY = 11,
  IDEAL_STATUS_IO = 12,
  IDEAL_STATUS_BUFFER_TOO_SMALL = 13,
  IDEAL_STATUS_PANIC = 14,
} IdealStatus;

/*
 Selection strategy codes.
 */
typedef enum IdealStrategy {
  IDEAL_STRATEGY_IDEAL = 0,
  IDEAL_STRATEGY_RANDOM = 1,
  IDEAL_STRATEGY_ENTROPY = 2,
  IDEAL_STRATEGY_CORESET = 3,
} IdealStrategy;

/*
 Opaque run configuration.
 */
typedef struct IdealConfig IdealConfig;

/*
 Opaque dataset with min-max normalised features.
 */
typedef struct IdealDataset IdealDataset;

/*
 Opaque active-learning loop.
 */
typedef struct IdealEngine IdealEngine;

/*
 Scalar fields of one cycle. `mean_in_total` and `max_in_total` are NaN
 when the inconsistency ranker did not run.
 */
typedef struct IdealCycleSummary {
  size_t cycle;
  size_t n_labeled;
  double accuracy;
  double mean_in_total;
  double max_in_total;
  double select_ms;
  size_t n_selected;
} IdealCycleSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call into the library on the same thread.
 */
const char *ideal_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *ideal_version(void);

/*
 Default configuration. Never null.
 */
struct IdealConfig *ideal_config_default(void);

/*
 Parses TOML text into a configuration.

 # Safety
 `toml` must be a nul-terminated string; `out` must be writable.
 */
enum IdealStatus ideal_config_from_toml(const char *toml, struct IdealConfig **out);

/*
 # Safety
 `config` must come from this library and not be used afterwards. Null is ignored.
 */
void ideal_config_free(struct IdealConfig *config);

/*
 # Safety
 `config` must be a live configuration handle.
 */
enum IdealStatus ideal_config_set_seed(struct IdealConfig *config, uint64_t seed);

/*
 # Safety
 `config` must be a live configuration handle.
 */
enum IdealStatus ideal_config_set_strategy(struct IdealConfig *config, enum IdealStrategy strategy);

/*
 # Safety
 `config` must be a live configuration handle.
 */
enum IdealStatus ideal_config_set_budget(struct IdealConfig *config, size_t budget, size_t cycles);

/*
 Loads and normalises a dataset file.

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum IdealStatus ideal_dataset_load(const char *path, struct IdealDataset **out);

/*
 Generates a class-balanced Gaussian-mixture dataset.

 # Safety
 `out` must be writable.
 */
enum IdealStatus ideal_dataset_synthetic(size_t classes,
                                         size_t clusters_per_class,
                                         size_t per_class,
                                         size_t dim,
                                         double noise,
                                         uint64_t seed,
                                         struct IdealDataset **out);

/*
 Sample count, or 0 for a null handle.

 # Safety
 `dataset` must be null or a live dataset handle.
 */
size_t ideal_dataset_len(const struct IdealDataset *dataset);

/*
 # Safety
 `dataset` must be null or a live dataset handle.
 */
size_t ideal_dataset_dim(const struct IdealDataset *dataset);

/*
 # Safety
 `dataset` must come from this library and not be used afterwards. Null is ignored.
 */
void ideal_dataset_free(struct IdealDataset *dataset);

/*
 Creates a loop. The engine copies what it needs; both inputs may be
 freed afterwards.

 # Safety
 `config` and `dataset` must be live handles; `out` must be writable.
 */
enum IdealStatus ideal_engine_new(const struct IdealConfig *config,
                                  const struct IdealDataset *dataset,
                                  struct IdealEngine **out);

/*
 Runs one cycle. Returns `PoolExhausted` once the pool cannot cover the budget.

 # Safety
 `engine` must be a live engine handle; `summary` must be writable.
 */
enum IdealStatus ideal_engine_run_cycle(struct IdealEngine *engine,
                                        struct IdealCycleSummary *summary);

/*
 Copies the ids selected in the most recent cycle into `ids`.
 `written` receives the id count even when `capacity` is too small.

 # Safety
 `engine` must be a live engine handle; `ids` must hold `capacity` values.
 */
enum IdealStatus ideal_engine_last_selected(const struct IdealEngine *engine,
                                            uint64_t *ids,
                                            size_t capacity,
                                            size_t *written);

/*
 Labeled count, or 0 for a null handle.

 # Safety
 `engine` must be null or a live engine handle.
 */
size_t ideal_engine_labeled_count(const struct IdealEngine *engine);

/*
 # Safety
 `engine` must come from this library and not be used afterwards. Null is ignored.
 */
void ideal_engine_free(struct IdealEngine *engine);

/*
 `KL(p || q)` for two distributions over `classes` entries.

 # Safety
 `p` and `q` must hold `classes` values; `out` must be writable.
 */
enum IdealStatus ideal_kl_divergence(const double *p, const double *q, size_t classes, double *out);

/*
 Coarse inconsistency of `n` predictions (original first).

 # Safety
 `probs` must hold `n * classes` values; `out` must be writable.
 */
enum IdealStatus ideal_coarse_inconsistency(const double *probs,
                                            size_t n,
                                            size_t classes,
                                            double *out);

/*
 Fine inconsistency of `n` coarse predictions against `n` perturbed ones.

 # Safety
 `coarse` and `perturbed` must each hold `n * classes` values; `out` must be writable.
 */
enum IdealStatus ideal_fine_inconsistency(const double *coarse,
                                          const double *perturbed,
                                          size_t n,
                                          size_t classes,
                                          double *out);

/*
 Entropy of one distribution.

 # Safety
 `probs` must hold `classes` values; `out` must be writable.
 */
enum IdealStatus ideal_entropy(const double *probs, size_t classes, double *out);

/*
 Share of `values` strictly below each value, written to `out`.

 # Safety
 `values` and `out` must each hold `n` values.
 */
enum IdealStatus ideal_percentiles(const double *values, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IDEAL_H */
