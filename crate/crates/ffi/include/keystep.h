#ifndef KEYSTEP_H
#define KEYSTEP_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_USAGE = 1,
  KS_STATUS_VALIDATION = 2,
  KS_STATUS_NUMERIC = 3,
  KS_STATUS_NULL_POINTER = 4,
  KS_STATUS_INVALID_UTF8 = 5,
  KS_STATUS_PANIC = 6,
} KsStatus;

/**
 * Budget curve handle.
 */
typedef struct KsBudgetCurve KsBudgetCurve;

/**
 * Parsed corpus handle.
 */
typedef struct KsCorpus KsCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next
 * `ks_` call on the same thread.
 */
const char *ks_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *ks_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from a `ks_` function documented as returning an owned
 * string, or be null.
 */
void ks_string_free(char *s);

/**
 * Parses a corpus JSONL file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum KsStatus ks_corpus_load(const char *path, bool lenient, struct KsCorpus **out);

/**
 * Number of questions; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle from `ks_corpus_load`.
 */
size_t ks_corpus_len(const struct KsCorpus *corpus);

/**
 * Id of question `index` as an owned string (free with
 * `ks_string_free`), or null when out of range.
 *
 * # Safety
 * `corpus` must be null or a live handle from `ks_corpus_load`.
 */
char *ks_corpus_question_id(const struct KsCorpus *corpus, size_t index);

/**
 * # Safety
 * `corpus` must be null or a live handle from `ks_corpus_load`, not
 * already freed.
 */
void ks_corpus_free(struct KsCorpus *corpus);

/**
 * Runs the whole pipeline from a TOML config. `out_dir` may be null to
 * keep the configured output directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out_dir` must be null
 * or NUL-terminated.
 */
enum KsStatus ks_pipeline_run(const char *config_path, const char *out_dir);

/**
 * # Safety
 * `out` must be writable.
 */
enum KsStatus ks_budget_curve_new(double b,
                                  double c0,
                                  double p,
                                  size_t terminal_stage,
                                  struct KsBudgetCurve **out);

/**
 * Budget at stage `t`; NaN for a null handle.
 *
 * # Safety
 * `curve` must be null or a live handle from `ks_budget_curve_new`.
 */
double ks_budget_curve_at(const struct KsBudgetCurve *curve, double t);

/**
 * # Safety
 * `curve` must be null or a live handle from `ks_budget_curve_new`, not
 * already freed.
 */
void ks_budget_curve_free(struct KsBudgetCurve *curve);

/**
 * Budgeted selection over `n` candidates. Writes 1 into `selected[i]` for
 * chosen candidates and 0 otherwise.
 *
 * # Safety
 * `increments` and `clusters` must hold `n` elements; `selected` must
 * have room for `n` bytes.
 */
enum KsStatus ks_select_ftgp(const double *increments,
                             const size_t *clusters,
                             size_t n,
                             size_t n_clusters,
                             double budget,
                             double beta,
                             double epsilon,
                             uint8_t *selected);

/**
 * Value of the subset flagged nonzero in `selected`.
 *
 * # Safety
 * `increments`, `clusters` and `selected` must hold `n` elements; `out`
 * must be writable.
 */
enum KsStatus ks_value_of(const double *increments,
                          const size_t *clusters,
                          size_t n,
                          size_t n_clusters,
                          double budget,
                          double beta,
                          const uint8_t *selected,
                          double *out);

/**
 * Difficulty of one step of `n` tokens given raw token weights.
 *
 * # Safety
 * `logprobs` and `weights` must hold `n` elements; `out` must be writable.
 */
enum KsStatus ks_step_difficulty(const double *logprobs,
                                 const double *weights,
                                 size_t n,
                                 double *out);

/**
 * Weighted loss over tokens `[gen_start, n)`; `weights` covers only that
 * range (`n - gen_start` elements).
 *
 * # Safety
 * `logprobs` must hold `n` elements and `weights` `n - gen_start`; `out`
 * must be writable.
 */
enum KsStatus ks_evaluate_loss(const double *logprobs,
                               size_t n,
                               size_t gen_start,
                               const double *weights,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KEYSTEP_H */
