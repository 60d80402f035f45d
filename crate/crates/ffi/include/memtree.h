#ifndef MEMTREE_H
#define MEMTREE_H

/* Generated by cbindgen from memtree-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible FFI call.
 */
typedef enum MemtreeStatus {
  MEMTREE_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  MEMTREE_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MEMTREE_STATUS_INVALID_UTF8 = 2,
  /**
   * Arguments were syntactically fine but semantically rejected.
   */
  MEMTREE_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Problem generation failed.
   */
  MEMTREE_STATUS_TASK_ERROR = 4,
  /**
   * The search itself failed.
   */
  MEMTREE_STATUS_SEARCH_ERROR = 5,
  /**
   * The caller's buffer cannot hold the result; `*written` has the size.
   */
  MEMTREE_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A panic was caught at the boundary.
   */
  MEMTREE_STATUS_PANIC = 7,
} MemtreeStatus;

/**
 * Search configuration; starts from library defaults.
 */
typedef struct MemtreeConfig MemtreeConfig;

/**
 * A generated benchmark problem.
 */
typedef struct MemtreeProblem MemtreeProblem;

/**
 * A finished search.
 */
typedef struct MemtreeResult MemtreeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the most recent failure on this thread.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes (or be NULL for size probing);
 * `written` must point to a writable `size_t`.
 */
enum MemtreeStatus memtree_last_error(char *buf, size_t cap, size_t *written);

/**
 * Copies the library version string.
 *
 * # Safety
 * Same buffer contract as [`memtree_last_error`].
 */
enum MemtreeStatus memtree_version(char *buf, size_t cap, size_t *written);

/**
 * Generates a problem. `family` is one of `arithmetic_chain`,
 * `token_path`, `distractor_tree`.
 *
 * # Safety
 * `family` must be a NUL-terminated string; `out` must be a valid pointer.
 * The returned handle must be released with [`memtree_problem_free`].
 */
enum MemtreeStatus memtree_problem_generate(const char *family,
                                            uint32_t depth,
                                            size_t distractors,
                                            size_t correct_width,
                                            size_t trap_pool,
                                            uint64_t seed,
                                            struct MemtreeProblem **out);

/**
 * # Safety
 * `problem` must come from [`memtree_problem_generate`] (or be NULL) and
 * must not be used afterwards.
 */
void memtree_problem_free(struct MemtreeProblem *problem);

/**
 * Copies the problem's stable identifier.
 *
 * # Safety
 * `problem` must be a live handle; buffer contract as [`memtree_last_error`].
 */
enum MemtreeStatus memtree_problem_id(const struct MemtreeProblem *problem,
                                      char *buf,
                                      size_t cap,
                                      size_t *written);

/**
 * Copies the problem statement shown to a solver.
 *
 * # Safety
 * `problem` must be a live handle; buffer contract as [`memtree_last_error`].
 */
enum MemtreeStatus memtree_problem_statement(const struct MemtreeProblem *problem,
                                             char *buf,
                                             size_t cap,
                                             size_t *written);

/**
 * Creates a configuration with library defaults. Never fails.
 */
struct MemtreeConfig *memtree_config_new(void);

/**
 * # Safety
 * `config` must come from [`memtree_config_new`] (or be NULL) and must not
 * be used afterwards.
 */
void memtree_config_free(struct MemtreeConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_rollouts(struct MemtreeConfig *config, uint64_t rollouts);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_seed(struct MemtreeConfig *config, uint64_t seed);

/**
 * Sets the memory ablation: `full`, `no_heuristics`, `no_fallacies`, `none`.
 *
 * # Safety
 * `config` must be a live handle; `mode` a NUL-terminated string.
 */
enum MemtreeStatus memtree_config_set_memory_mode(struct MemtreeConfig *config, const char *mode);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_exploration(struct MemtreeConfig *config, double weight);

/**
 * Sets the heuristic (`tau_pos`) and fallacy (`tau_neg`) write thresholds.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_thresholds(struct MemtreeConfig *config,
                                                 double tau_pos,
                                                 double tau_neg);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_limits(struct MemtreeConfig *config,
                                             uint32_t max_depth,
                                             size_t max_children);

/**
 * Sets memory capacity per kind and the hint budget per prompt.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_memory(struct MemtreeConfig *config,
                                             size_t capacity,
                                             size_t max_hints);

/**
 * Switches the exploration term to `sqrt(2 ln N / n)`.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum MemtreeStatus memtree_config_set_uct_times_two(struct MemtreeConfig *config, bool enabled);

/**
 * Runs the synthetic-backend search. `noise_amplitude` perturbs the value
 * oracle deterministically; 0 makes it exact.
 *
 * # Safety
 * `config` and `problem` must be live handles; `out` a valid pointer. The
 * returned handle must be released with [`memtree_result_free`].
 */
enum MemtreeStatus memtree_search_run(const struct MemtreeConfig *config,
                                      const struct MemtreeProblem *problem,
                                      double noise_amplitude,
                                      struct MemtreeResult **out);

/**
 * # Safety
 * `result` must come from [`memtree_search_run`] (or be NULL) and must not
 * be used afterwards.
 */
void memtree_result_free(struct MemtreeResult *result);

/**
 * Whether the extracted answer matched the problem's ground truth.
 *
 * # Safety
 * `result` must be a live handle; `out` a valid pointer.
 */
enum MemtreeStatus memtree_result_success(const struct MemtreeResult *result, bool *out);

/**
 * Number of distinct root-to-terminal paths the search materialized.
 *
 * # Safety
 * `result` must be a live handle; `out` a valid pointer.
 */
enum MemtreeStatus memtree_result_trajectories(const struct MemtreeResult *result, uint64_t *out);

/**
 * Mean depth of the tree's terminal nodes.
 *
 * # Safety
 * `result` must be a live handle; `out` a valid pointer.
 */
enum MemtreeStatus memtree_result_depth(const struct MemtreeResult *result, double *out);

/**
 * Copies the extracted answer; an answerless search yields an empty string.
 *
 * # Safety
 * `result` must be a live handle; buffer contract as [`memtree_last_error`].
 */
enum MemtreeStatus memtree_result_answer(const struct MemtreeResult *result,
                                         char *buf,
                                         size_t cap,
                                         size_t *written);

/**
 * Copies the canonical JSON of the full search tree.
 *
 * # Safety
 * `result` must be a live handle; buffer contract as [`memtree_last_error`].
 */
enum MemtreeStatus memtree_result_tree_json(const struct MemtreeResult *result,
                                            char *buf,
                                            size_t cap,
                                            size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMTREE_H */
