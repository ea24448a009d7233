#ifndef QECS_H
#define QECS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every fallible entry point.
 */
typedef enum {
  QECS_STATUS_OK = 0,
  QECS_STATUS_NULL_POINTER = 1,
  QECS_STATUS_INVALID_UTF8 = 2,
  QECS_STATUS_INVALID_INPUT = 3,
  QECS_STATUS_IO = 4,
  QECS_STATUS_CHECKPOINT = 5,
  QECS_STATUS_FINGERPRINT_MISMATCH = 6,
  QECS_STATUS_MISSING_PREREQUISITE = 7,
  QECS_STATUS_CONFIG = 8,
  QECS_STATUS_PANIC = 9,
} QecsStatus;

/*
 Ranked hits from one search.
 */
typedef struct QecsResults QecsResults;

/*
 Loaded models and index for interactive search.
 */
typedef struct QecsSearcher QecsSearcher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null if none.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *qecs_last_error(void);

/*
 Library version as a static string.
 */
const char *qecs_version(void);

/*
 Splits identifiers and prose into lowercase tokens, joined by single spaces.
 The result must be released with [`qecs_string_free`].

 # Safety
 `text` must be a valid NUL-terminated string; `out` must be writable.
 */
QecsStatus qecs_tokenize(const char *text, char **out);

/*
 # Safety
 `s` must come from this library, or be null.
 */
void qecs_string_free(char *s);

/*
 Mean reciprocal rank of 1-based ranks.

 # Safety
 `franks` must point to `len` values; `out` must be writable.
 */
QecsStatus qecs_mrr(const uintptr_t *franks, uintptr_t len, double *out);

/*
 Fraction of ranks at or below `k`.

 # Safety
 `franks` must point to `len` values; `out` must be writable.
 */
QecsStatus qecs_recall_at_k(const uintptr_t *franks, uintptr_t len, uintptr_t k, double *out);

/*
 Smoothed sentence BLEU-4 between two token id sequences.

 # Safety
 Each pointer must reference the stated number of ids.
 */
QecsStatus qecs_bleu4(const uint32_t *candidate,
                      uintptr_t candidate_len,
                      const uint32_t *reference,
                      uintptr_t reference_len,
                      double *out);

/*
 `beta * sim_enriched + (1 - beta) * sim_original`.
 */
double qecs_hybrid_score(double sim_enriched, double sim_original, double beta);

/*
 Opens the checkpoints and index of a finished run.

 `config_path`, `workdir` and `mode` may be null to keep the configured (or default)
 values; pass NaN as `beta` to keep the configured weight.

 # Safety
 Non-null strings must be NUL-terminated; `out` must be writable.
 */
QecsStatus qecs_searcher_open(const char *config_path,
                              const char *workdir,
                              const char *mode,
                              double beta,
                              QecsSearcher **out);

/*
 Number of indexed snippets.

 # Safety
 `searcher` must be a live handle or null.
 */
uintptr_t qecs_searcher_len(const QecsSearcher *searcher);

/*
 Ranks the index against a free-text query and keeps the best `top_k` hits.

 # Safety
 `searcher` must be a live handle; `query` NUL-terminated; `out` writable.
 */
QecsStatus qecs_searcher_search(const QecsSearcher *searcher,
                                const char *query,
                                uintptr_t top_k,
                                QecsResults **out);

/*
 # Safety
 `searcher` must come from [`qecs_searcher_open`], or be null.
 */
void qecs_searcher_free(QecsSearcher *searcher);

/*
 # Safety
 `results` must be a live handle or null.
 */
uintptr_t qecs_results_len(const QecsResults *results);

/*
 Snippet id of hit `i`, or null when out of range. Owned by `results`.

 # Safety
 `results` must be a live handle or null.
 */
const char *qecs_results_id(const QecsResults *results, uintptr_t i);

/*
 Score of hit `i`, or NaN when out of range.

 # Safety
 `results` must be a live handle or null.
 */
double qecs_results_score(const QecsResults *results, uintptr_t i);

/*
 # Safety
 `results` must come from [`qecs_searcher_search`], or be null.
 */
void qecs_results_free(QecsResults *results);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QECS_H */
