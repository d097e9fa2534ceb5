#ifndef CDT_H
#define CDT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CdtStatus {
  CDT_STATUS_OK = 0,
  CDT_STATUS_NULL_POINTER = 1,
  CDT_STATUS_INVALID_UTF8 = 2,
  CDT_STATUS_IO = 3,
  CDT_STATUS_PARSE = 4,
  CDT_STATUS_CONFIG = 5,
  CDT_STATUS_VALIDATION = 6,
  CDT_STATUS_CHECKPOINT = 7,
  CDT_STATUS_NUMERIC = 8,
  CDT_STATUS_PANIC = 9,
} CdtStatus;

// Loaded dataset bundle.
typedef struct CdtBundle CdtBundle;

// Trained model restored from a checkpoint.
typedef struct CdtModel CdtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *cdt_last_error(void);

// Library version as a static NUL-terminated string.
const char *cdt_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void cdt_string_free(char *s);

// Loads a bundle from its descriptor file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CdtStatus cdt_bundle_load(const char *path, struct CdtBundle **out);

// Generates a synthetic bundle from the `[synth]` section of `config_path`
// (defaults when null) with the given seed.
//
// # Safety
// `config_path` must be null or NUL-terminated; `out` must be writable.
enum CdtStatus cdt_bundle_synth(const char *config_path, uint64_t seed, struct CdtBundle **out);

// Target users, target items and source domain count.
//
// # Safety
// `bundle` must be a live handle; the out-pointers must be writable.
enum CdtStatus cdt_bundle_shape(const struct CdtBundle *bundle,
                                size_t *n_users,
                                size_t *n_items,
                                size_t *n_sources);

// # Safety
// `bundle` must be null or a handle not yet freed.
void cdt_bundle_free(struct CdtBundle *bundle);

// Runs the repeated-split experiment on `bundle` and returns the metrics
// report as JSON in `out_json`.
//
// # Safety
// `bundle` must be a live handle, `config_path` null or NUL-terminated,
// `overrides` an array of `n_overrides` NUL-terminated strings, `out_json`
// writable.
enum CdtStatus cdt_experiment_run(const struct CdtBundle *bundle,
                                  const char *config_path,
                                  const char *const *overrides,
                                  size_t n_overrides,
                                  char **out_json);

// Restores a model from a checkpoint file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum CdtStatus cdt_model_load(const char *path, struct CdtModel **out);

// Feature dimension the model expects.
//
// # Safety
// `model` must be a live handle; `dim` and `is_deep` must be writable.
enum CdtStatus cdt_model_info(const struct CdtModel *model, size_t *dim, bool *is_deep);

// Scores one sparse feature vector. `columns` must strictly increase and
// include `item_column`, the active target item feature.
//
// # Safety
// `model` must be a live handle, `columns` and `values` arrays of `len`
// elements, `out` writable.
enum CdtStatus cdt_model_score(const struct CdtModel *model,
                               const size_t *columns,
                               const double *values,
                               size_t len,
                               size_t item_column,
                               double *out);

// # Safety
// `model` must be null or a handle not yet freed.
void cdt_model_free(struct CdtModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDT_H */
