#ifndef GOMEA_SR_H
#define GOMEA_SR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum GsrStatus {
  GSR_STATUS_OK = 0,
  GSR_STATUS_NULL_POINTER = 1,
  GSR_STATUS_INVALID_ARGUMENT = 2,
  GSR_STATUS_IO = 3,
  GSR_STATUS_DATA = 4,
  GSR_STATUS_CONFIG = 5,
  GSR_STATUS_ENGINE = 6,
  GSR_STATUS_BUFFER_TOO_SMALL = 7,
  GSR_STATUS_PANIC = 8,
} GsrStatus;

/**
 * Accumulated key/value run settings.
 */
typedef struct GsrConfig GsrConfig;

/**
 * A loaded or generated dataset.
 */
typedef struct GsrDataset GsrDataset;

/**
 * The record of a finished run.
 */
typedef struct GsrRunRecord GsrRunRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` and returns the
 * buffer size it needs (including the terminator); 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t gsr_last_error_message(char *buf, size_t len);

/**
 * Loads a CSV file with a header row. `target` is a column name or a
 * zero-based index.
 *
 * # Safety
 * `path` and `target` must be NUL-terminated strings; `out` must be
 * writable.
 */
enum GsrStatus gsr_dataset_load_csv(const char *path, const char *target, struct GsrDataset **out);

/**
 * Generates a named synthetic problem.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum GsrStatus gsr_dataset_synthetic(const char *name,
                                     size_t rows,
                                     double noise,
                                     uint64_t seed,
                                     struct GsrDataset **out);

/**
 * # Safety
 * `d` must be null or a handle from this library not yet freed.
 */
void gsr_dataset_free(struct GsrDataset *d);

/**
 * Number of rows, 0 for a null handle.
 *
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t gsr_dataset_rows(const struct GsrDataset *d);

/**
 * Number of features, 0 for a null handle.
 *
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t gsr_dataset_features(const struct GsrDataset *d);

/**
 * Creates an empty configuration (all defaults).
 */
struct GsrConfig *gsr_config_new(void);

/**
 * Sets one key, using the same keys as configuration files.
 *
 * # Safety
 * `c` must be a live config handle; `key` and `value` NUL-terminated.
 */
enum GsrStatus gsr_config_set(struct GsrConfig *c, const char *key, const char *value);

/**
 * # Safety
 * `c` must be null or a handle from this library not yet freed.
 */
void gsr_config_free(struct GsrConfig *c);

/**
 * Runs the configuration. With a non-null `data` the run uses it instead
 * of the configured data source.
 *
 * # Safety
 * `c` must be a live config, `data` null or a live dataset, and `out`
 * writable.
 */
enum GsrStatus gsr_run(const struct GsrConfig *c,
                       const struct GsrDataset *data,
                       struct GsrRunRecord **out);

/**
 * Training R² of the best solution; NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live record handle.
 */
double gsr_record_train_r2(const struct GsrRunRecord *r);

/**
 * Validation R²; NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live record handle.
 */
double gsr_record_validation_r2(const struct GsrRunRecord *r);

/**
 * Test R²; NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live record handle.
 */
double gsr_record_test_r2(const struct GsrRunRecord *r);

/**
 * Evaluations used by the run; 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live record handle.
 */
uint64_t gsr_record_evaluations(const struct GsrRunRecord *r);

/**
 * Copies the infix expression of the best solution. `needed` (optional)
 * receives the required buffer size including the terminator.
 *
 * # Safety
 * `r` must be a live record; `buf` null or `len` writable bytes; `needed`
 * null or writable.
 */
enum GsrStatus gsr_record_expression(const struct GsrRunRecord *r,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

/**
 * Writes the record as line-delimited JSON to `path`.
 *
 * # Safety
 * `r` must be a live record and `path` a NUL-terminated string.
 */
enum GsrStatus gsr_record_write_jsonl(const struct GsrRunRecord *r, const char *path);

/**
 * # Safety
 * `r` must be null or a handle from this library not yet freed.
 */
void gsr_record_free(struct GsrRunRecord *r);

/**
 * Fills `out` with the row-major node-proximity matrix of the binary
 * template of `height`. `nodes` (optional) receives the node count; `len`
 * must be at least its square.
 *
 * # Safety
 * `out` must be null or point to `len` writable doubles; `nodes` null or
 * writable.
 */
enum GsrStatus gsr_node_proximity(size_t height, double *out, size_t len, size_t *nodes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOMEA_SR_H */
