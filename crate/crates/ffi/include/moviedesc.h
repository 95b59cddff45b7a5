#ifndef MOVIEDESC_H
#define MOVIEDESC_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MdStatus {
  MD_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8, wrong length or out-of-range value.
   */
  MD_STATUS_INVALID_ARGUMENT = 1,
  MD_STATUS_IO = 2,
  /**
   * A file exists but does not parse as the expected container.
   */
  MD_STATUS_FORMAT = 3,
  MD_STATUS_NUMERIC = 4,
  /**
   * A panic was caught at the boundary.
   */
  MD_STATUS_INTERNAL = 5,
} MdStatus;

/**
 * A trained, selected classifier bank.
 */
typedef struct MdBank MdBank;

/**
 * An LSTM ensemble ready for generation.
 */
typedef struct MdEnsemble MdEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next library call on the same thread; do not free.
 */
const char *md_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *md_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void md_string_free(char *s);

/**
 * Loads a bank file (`bank.selected.json`) into `*out`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is a valid pointer.
 */
enum MdStatus md_bank_load(const char *path, struct MdBank **out);

/**
 * # Safety
 * `bank` is null or a handle from [`md_bank_load`] not yet freed.
 */
void md_bank_free(struct MdBank *bank);

/**
 * Number of classifiers, which is the score vector length. 0 for null.
 *
 * # Safety
 * `bank` is null or a live handle.
 */
size_t md_bank_len(const struct MdBank *bank);

/**
 * Label text of classifier `index`, in score-vector order. Free the
 * result with [`md_string_free`].
 *
 * # Safety
 * `bank` is a live handle; `out` is a valid pointer.
 */
enum MdStatus md_bank_label(const struct MdBank *bank, size_t index, char **out);

/**
 * Scores one clip. Channel `i` is named `names[i]` and holds `dims[i]`
 * values at `values[i]`. Writes [`md_bank_len`] scores in (0,1) to
 * `out`, which has room for `out_len`.
 *
 * # Safety
 * The three arrays have `n_channels` entries; each `values[i]` points to
 * `dims[i]` doubles; `out` points to `out_len` doubles.
 */
enum MdStatus md_bank_score(const struct MdBank *bank,
                            const char *const *names,
                            const double *const *values,
                            const size_t *dims,
                            size_t n_channels,
                            double *out,
                            size_t out_len);

/**
 * Loads an ensemble file (`ensemble.json`) into `*out`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is a valid pointer.
 */
enum MdStatus md_ensemble_load(const char *path, struct MdEnsemble **out);

/**
 * # Safety
 * `e` is null or a handle from [`md_ensemble_load`] not yet freed.
 */
void md_ensemble_free(struct MdEnsemble *e);

/**
 * Expected visual input length. 0 for null.
 *
 * # Safety
 * `e` is null or a live handle.
 */
size_t md_ensemble_visual_dim(const struct MdEnsemble *e);

/**
 * Greedy generation from a score vector. Writes a space-separated
 * sentence to `*out`; free it with [`md_string_free`].
 *
 * # Safety
 * `visual` points to `visual_len` doubles; `out` is a valid pointer.
 */
enum MdStatus md_ensemble_generate(const struct MdEnsemble *e,
                                   const double *visual,
                                   size_t visual_len,
                                   size_t max_len,
                                   char **out);

/**
 * METEOR-lite of `candidate` against one `reference`, both raw text,
 * with default parameters.
 *
 * # Safety
 * Both strings are NUL-terminated; `out` is a valid pointer.
 */
enum MdStatus md_meteor(const char *candidate, const char *reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOVIEDESC_H */
