#ifndef FAIRSTITCH_H
#define FAIRSTITCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 5 match the command-line exit codes.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_CONFIG_ERROR = 2,
  FS_STATUS_DATA_ERROR = 3,
  FS_STATUS_DIVERGED = 4,
  FS_STATUS_IO_ERROR = 5,
  FS_STATUS_NULL_POINTER = 10,
  FS_STATUS_INVALID_ARGUMENT = 11,
  FS_STATUS_PANIC = 12,
} FsStatus;

/**
 * Constraint used for the AF column of an evaluation.
 */
typedef enum FsConstraint {
  FS_CONSTRAINT_NONE = 0,
  FS_CONSTRAINT_EQUALIZED_ODDS = 1,
  FS_CONSTRAINT_ACCURACY_EQUALITY = 2,
  FS_CONSTRAINT_MAX_MIN_FAIRNESS = 3,
} FsConstraint;

/**
 * Opaque feature/group/label dataset.
 */
typedef struct FsDataset FsDataset;

/**
 * Opaque network, possibly with a stitch.
 */
typedef struct FsNetwork FsNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next fallible call on the same thread.
 */
const char *fs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fs_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed at most once.
 */
void fs_string_free(char *s);

/**
 * Loads a `f0,...,a,y` CSV file.
 *
 * # Safety
 * `path_utf8` must be a NUL-terminated string; `out` a writable pointer.
 */
enum FsStatus fs_dataset_load_csv(const char *path_utf8, struct FsDataset **out);

/**
 * Draws the default biased synthetic dataset with `n` rows of `d` features.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum FsStatus fs_dataset_synthetic(size_t n, size_t d, uint64_t seed, struct FsDataset **out);

/**
 * Number of rows; 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t fs_dataset_len(const struct FsDataset *ds);

/**
 * Feature width; 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t fs_dataset_dim(const struct FsDataset *ds);

/**
 * Writes the `(y,a)` cell counts in the order (0,0), (0,1), (1,0), (1,1).
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must hold 4 elements.
 */
enum FsStatus fs_dataset_cell_counts(const struct FsDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be NULL or a handle from this library, freed at most once.
 */
void fs_dataset_free(struct FsDataset *ds);

/**
 * Glorot-initialized MLP with widths `dims[0..len]`; the last width must be 2.
 *
 * # Safety
 * `dims` must point to `len` elements; `out` must be writable.
 */
enum FsStatus fs_network_init_mlp(const size_t *dims,
                                  size_t len,
                                  uint64_t seed,
                                  struct FsNetwork **out);

/**
 * Loads a checkpoint JSON file written by the pipeline.
 *
 * # Safety
 * `path_utf8` must be a NUL-terminated string; `out` must be writable.
 */
enum FsStatus fs_network_load_checkpoint(const char *path_utf8, struct FsNetwork **out);

/**
 * Input width; 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or a live network handle.
 */
size_t fs_network_input_dim(const struct FsNetwork *net);

/**
 * Writes `P(y = 1)` for every row of `ds` into `out[0..len]`; `len` must
 * equal the dataset length.
 *
 * # Safety
 * Handles must be live; `out` must hold `len` elements.
 */
enum FsStatus fs_network_predict(const struct FsNetwork *net,
                                 const struct FsDataset *ds,
                                 double *out,
                                 size_t len);

/**
 * Full metrics report of `net` on `ds` as a JSON object.
 *
 * # Safety
 * Handles must be live; `out_json` must be writable. Free the result with
 * [`fs_string_free`].
 */
enum FsStatus fs_network_evaluate_json(const struct FsNetwork *net,
                                       const struct FsDataset *ds,
                                       enum FsConstraint constraint,
                                       char **out_json);

/**
 * # Safety
 * `net` must be NULL or a handle from this library, freed at most once.
 */
void fs_network_free(struct FsNetwork *net);

/**
 * Balanced accuracy at `threshold`.
 *
 * # Safety
 * `p` and `y` must point to `n` elements; `out` must be writable.
 */
enum FsStatus fs_bacc(const double *p, const uint8_t *y, size_t n, double threshold, double *out);

/**
 * ROC AUC with ties counted as one half.
 *
 * # Safety
 * `p` and `y` must point to `n` elements; `out` must be writable.
 */
enum FsStatus fs_auc(const double *p, const uint8_t *y, size_t n, double *out);

/**
 * Equalized-odds difference: max of the TPR and FPR gaps between groups.
 *
 * # Safety
 * `p`, `y` and `a` must point to `n` elements; `out` must be writable.
 */
enum FsStatus fs_eo_diff(const double *p,
                         const uint8_t *y,
                         const uint8_t *a,
                         size_t n,
                         double threshold,
                         double *out);

/**
 * Accuracy-equality difference between groups.
 *
 * # Safety
 * `p`, `y` and `a` must point to `n` elements; `out` must be writable.
 */
enum FsStatus fs_ae_diff(const double *p,
                         const uint8_t *y,
                         const uint8_t *a,
                         size_t n,
                         double threshold,
                         double *out);

/**
 * Lowest accuracy over the four `(y,a)` cells.
 *
 * # Safety
 * `p`, `y` and `a` must point to `n` elements; `out` must be writable.
 */
enum FsStatus fs_worst_accuracy(const double *p,
                                const uint8_t *y,
                                const uint8_t *a,
                                size_t n,
                                double threshold,
                                double *out);

/**
 * Area between the two groups' ROC curves on a uniform grid of `grid` points.
 *
 * # Safety
 * `p`, `y` and `a` must point to `n` elements; `out` must be writable.
 */
enum FsStatus fs_abroca(const double *p,
                        const uint8_t *y,
                        const uint8_t *a,
                        size_t n,
                        size_t grid,
                        double *out);

/**
 * Runs the whole pipeline (data, pretraining, both fine-tuning methods,
 * evaluation, interpolation, report) into `out_dir`. A NULL `config_path`
 * uses the default configuration.
 *
 * # Safety
 * `config_path` must be NULL or NUL-terminated; `out_dir` NUL-terminated.
 */
enum FsStatus fs_run_pipeline(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRSTITCH_H */
