#ifndef MIXSEG_H
#define MIXSEG_H

/* Generated by cbindgen from mixseg-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum {
  MIXSEG_STATUS_OK = 0,
  MIXSEG_STATUS_NULL_ARGUMENT = 1,
  MIXSEG_STATUS_INVALID_ARGUMENT = 2,
  MIXSEG_STATUS_CONFIG_ERROR = 3,
  MIXSEG_STATUS_TRAINING_ERROR = 4,
  MIXSEG_STATUS_IO_ERROR = 5,
  MIXSEG_STATUS_UTF8_ERROR = 6,
  MIXSEG_STATUS_PANIC = 7,
} MixsegStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct MixsegConfig MixsegConfig;

/**
 * Opaque dataset (training pool + held-out evaluation pairs).
 */
typedef struct MixsegDataset MixsegDataset;

/**
 * Final and best held-out mIoU of one training run.
 */
typedef struct {
  double final_miou;
  double best_miou;
  /**
   * Number of evaluation points in the metric series.
   */
  uintptr_t evaluations;
} MixsegRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (truncated to
 * `cap - 1` bytes, always NUL-terminated). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be null (then only
 * the required length is returned).
 */
uintptr_t mixseg_last_error(char *buf, uintptr_t cap);

/**
 * Library version as a static string; do not free.
 */
const char *mixseg_version(void);

/**
 * Free a string allocated by this library.
 *
 * # Safety
 * `s` must come from a mixseg function documented to transfer string
 * ownership, and must not be freed twice.
 */
void mixseg_string_free(char *s);

/**
 * New configuration with every field at its default.
 */
MixsegConfig *mixseg_config_default(void);

/**
 * Parse `key = value` configuration text into a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be a valid pointer.
 */
MixsegStatus mixseg_config_parse(const char *text, MixsegConfig **out);

/**
 * Set one configuration key, with the same validation as the config file.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
MixsegStatus mixseg_config_set(MixsegConfig *config, const char *key, const char *value);

/**
 * Resolved configuration snapshot as a newly allocated string; free with
 * `mixseg_string_free`. Returns null only on internal failure.
 *
 * # Safety
 * `config` must be a live handle.
 */
char *mixseg_config_to_text(const MixsegConfig *config);

/**
 * Destroy a configuration handle.
 *
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void mixseg_config_free(MixsegConfig *config);

/**
 * Generate the dataset described by the configuration.
 *
 * # Safety
 * `config` must be a live handle; `out` must be a valid pointer.
 */
MixsegStatus mixseg_dataset_generate(const MixsegConfig *config, MixsegDataset **out);

/**
 * Load a dataset directory written by `mixseg_dataset_save` or the CLI.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be a valid pointer.
 */
MixsegStatus mixseg_dataset_load(const char *dir, MixsegDataset **out);

/**
 * Persist a dataset as a directory of PPM/PGM pairs with an index file.
 *
 * # Safety
 * `dataset` must be a live handle; `dir` a NUL-terminated path.
 */
MixsegStatus mixseg_dataset_save(const MixsegDataset *dataset, const char *dir);

/**
 * Report pool sizes: total training scenes, labelled and unlabelled counts,
 * and evaluation scenes. Null out-pointers are skipped.
 *
 * # Safety
 * `dataset` must be a live handle; non-null out pointers must be writable.
 */
MixsegStatus mixseg_dataset_counts(const MixsegDataset *dataset,
                                   uintptr_t *train,
                                   uintptr_t *labelled,
                                   uintptr_t *unlabelled,
                                   uintptr_t *eval);

/**
 * Destroy a dataset handle.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void mixseg_dataset_free(MixsegDataset *dataset);

/**
 * Train one run with the given seed and fill `summary`.
 *
 * # Safety
 * `config` and `dataset` must be live handles; `summary` must be writable.
 */
MixsegStatus mixseg_run(const MixsegConfig *config,
                        const MixsegDataset *dataset,
                        uint64_t seed,
                        MixsegRunSummary *summary);

/**
 * Build a class-based mixing mask from a segmentation map: half of the
 * present classes (rounded up), chosen uniformly with `seed`, become 1.
 *
 * # Safety
 * `segmap` must hold `h*w` readable bytes and `out_mask` `h*w` writable
 * bytes.
 */
MixsegStatus mixseg_classmix_mask(const uint8_t *segmap,
                                  uintptr_t h,
                                  uintptr_t w,
                                  uint64_t seed,
                                  uint8_t *out_mask);

/**
 * Random rectangle mask of half the area.
 *
 * # Safety
 * `out_mask` must hold `h*w` writable bytes.
 */
MixsegStatus mixseg_cutmix_mask(uintptr_t h, uintptr_t w, uint64_t seed, uint8_t *out_mask);

/**
 * Thresholded smoothed-noise mask with ones-fraction `p`.
 *
 * # Safety
 * `out_mask` must hold `h*w` writable bytes.
 */
MixsegStatus mixseg_cowmix_mask(uintptr_t h,
                                uintptr_t w,
                                double sigma,
                                double p,
                                uint64_t seed,
                                uint8_t *out_mask);

/**
 * Mean intersection-over-union of two class-id rasters of `len` pixels with
 * `k` classes; classes absent from both are excluded from the mean.
 *
 * # Safety
 * `pred` and `gt` must hold `len` readable bytes; `out` must be writable.
 */
MixsegStatus mixseg_miou(const uint8_t *pred,
                         const uint8_t *gt,
                         uintptr_t len,
                         uintptr_t k,
                         double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MIXSEG_H */
