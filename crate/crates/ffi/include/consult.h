#ifndef CONSULT_H
#define CONSULT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConsultStatus {
  CONSULT_STATUS_OK = 0,
  CONSULT_STATUS_NULL_ARGUMENT = 1,
  CONSULT_STATUS_INVALID_UTF8 = 2,
  CONSULT_STATUS_INVALID_JSON = 3,
  CONSULT_STATUS_IO = 4,
  CONSULT_STATUS_PARSE = 5,
  CONSULT_STATUS_INVALID = 6,
  /**
   * A run finished but at least one case failed.
   */
  CONSULT_STATUS_PARTIAL = 7,
  CONSULT_STATUS_PANIC = 99,
} ConsultStatus;

typedef struct ConsultCorpus ConsultCorpus;

typedef struct ConsultIcdIndex ConsultIcdIndex;

typedef struct ConsultTaxonomy ConsultTaxonomy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on this thread.
 */
const char *consult_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void consult_string_free(char *s);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum ConsultStatus consult_taxonomy_bundled(struct ConsultTaxonomy **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
enum ConsultStatus consult_taxonomy_load(const char *path, struct ConsultTaxonomy **out);

/**
 * # Safety
 * `tax` must be null or a handle from this library, freed once.
 */
void consult_taxonomy_free(struct ConsultTaxonomy *tax);

/**
 * Parses an action line and writes its canonical rendering.
 *
 * # Safety
 * Pointers must be valid; `text_in` NUL-terminated.
 */
enum ConsultStatus consult_action_canonicalize(const struct ConsultTaxonomy *tax,
                                               const char *text_in,
                                               char **out);

/**
 * Harmonic mean of precision and recall on any common scale.
 */
double consult_f1(double precision, double recall);

/**
 * Precision and recall of two JSON string arrays.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum ConsultStatus consult_set_overlap(const char *predicted_json,
                                       const char *truth_json,
                                       double *precision,
                                       double *recall);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum ConsultStatus consult_icd_bundled(struct ConsultIcdIndex **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
enum ConsultStatus consult_icd_load(const char *path, struct ConsultIcdIndex **out);

/**
 * # Safety
 * `index` must be null or a handle from this library, freed once.
 */
void consult_icd_free(struct ConsultIcdIndex *index);

/**
 * Maps a JSON array of entity strings to `{"codes": [...], "unmatched": [...]}`.
 *
 * # Safety
 * Pointers must be valid; `entities_json` NUL-terminated.
 */
enum ConsultStatus consult_icd_normalize(const struct ConsultIcdIndex *index,
                                         const char *entities_json,
                                         char **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
enum ConsultStatus consult_corpus_load(const char *path, struct ConsultCorpus **out);

/**
 * Number of cases, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t consult_corpus_len(const struct ConsultCorpus *corpus);

/**
 * Case id at `i` as a new string.
 *
 * # Safety
 * `corpus` must be a live handle, `out` a valid pointer.
 */
enum ConsultStatus consult_corpus_case_id(const struct ConsultCorpus *corpus, size_t i, char **out);

/**
 * # Safety
 * `corpus` must be null or a handle from this library, freed once.
 */
void consult_corpus_free(struct ConsultCorpus *corpus);

/**
 * Runs a benchmark from a JSON run configuration and writes the run summary
 * as JSON. Returns `Partial` with the summary still written when some cases
 * failed.
 *
 * # Safety
 * Pointers must be valid; `config_json` NUL-terminated.
 */
enum ConsultStatus consult_run_benchmark(const char *config_json, char **summary_out);

/**
 * Turn and score statistics for a transcript directory as JSON.
 * `metrics_path` may be null.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum ConsultStatus consult_stats(const char *transcripts_dir, const char *metrics_path, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONSULT_H */
