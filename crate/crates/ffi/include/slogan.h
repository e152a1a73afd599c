#ifndef SLOGAN_H
#define SLOGAN_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SloganStatus {
  SLOGAN_STATUS_OK = 0,
  SLOGAN_STATUS_NULL_POINTER = 1,
  SLOGAN_STATUS_INVALID_UTF8 = 2,
  SLOGAN_STATUS_INVALID_INPUT = 3,
  SLOGAN_STATUS_INVALID_CONFIG = 4,
  SLOGAN_STATUS_IO = 5,
  SLOGAN_STATUS_PARSE = 6,
  SLOGAN_STATUS_NUMERIC = 7,
  SLOGAN_STATUS_PANIC = 8,
} SloganStatus;

/**
 * Opaque training configuration.
 */
typedef struct SloganConfig SloganConfig;

/**
 * Opaque graph dataset.
 */
typedef struct SloganDataset SloganDataset;

/**
 * Opaque trained model.
 */
typedef struct SloganModel SloganModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *slogan_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *slogan_version(void);

/**
 * Default training configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SloganStatus slogan_config_new(struct SloganConfig **out);

/**
 * Configuration from a JSON object; keys not given keep their defaults
 * (`{"seed": 3, "adapt_epochs": 10}`). Unknown keys are rejected.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum SloganStatus slogan_config_from_json(const char *json, struct SloganConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library not yet freed.
 */
void slogan_config_free(struct SloganConfig *cfg);

/**
 * Loads `root/name_*.txt` (or `root/name/name_*.txt`) tagged as `domain`
 * (0 source, 1 target).
 *
 * # Safety
 * `root` and `name` must be NUL-terminated strings and `out` writable.
 */
enum SloganStatus slogan_dataset_load_tu(const char *root,
                                         const char *name,
                                         uint32_t domain,
                                         struct SloganDataset **out);

/**
 * Synthetic source/target pair with spurious correlation `rho_s`.
 *
 * # Safety
 * `out_source` and `out_target` must be writable.
 */
enum SloganStatus slogan_dataset_synthetic(double rho_s,
                                           uintptr_t n_per_domain,
                                           uint64_t seed,
                                           struct SloganDataset **out_source,
                                           struct SloganDataset **out_target);

/**
 * Number of graphs, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uintptr_t slogan_dataset_len(const struct SloganDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle from this library not yet freed.
 */
void slogan_dataset_free(struct SloganDataset *ds);

/**
 * Source-only warm-up; `out` receives a new model.
 *
 * # Safety
 * `source` and `cfg` must be live handles and `out` writable.
 */
enum SloganStatus slogan_model_warmup(const struct SloganDataset *source,
                                      const struct SloganConfig *cfg,
                                      struct SloganModel **out);

/**
 * Adapts `model` in place to the unlabelled use of `target`.
 *
 * # Safety
 * All handles must be live; `model` must not be used concurrently.
 */
enum SloganStatus slogan_model_adapt(struct SloganModel *model,
                                     const struct SloganDataset *source,
                                     const struct SloganDataset *target,
                                     const struct SloganConfig *cfg);

/**
 * Classification accuracy of `model` on a labelled dataset.
 *
 * # Safety
 * Handles must be live and `out_accuracy` writable.
 */
enum SloganStatus slogan_model_accuracy(const struct SloganModel *model,
                                        const struct SloganDataset *ds,
                                        double *out_accuracy);

/**
 * Epochs the model has been trained for, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t slogan_model_epochs(const struct SloganModel *model);

/**
 * # Safety
 * `model` must be live and `path` a NUL-terminated string.
 */
enum SloganStatus slogan_model_save(const struct SloganModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SloganStatus slogan_model_load(const char *path, struct SloganModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void slogan_model_free(struct SloganModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLOGAN_H */
