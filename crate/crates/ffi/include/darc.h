/* darc: causal DAG discovery from incomplete observational data. */

#ifndef DARC_H
#define DARC_H

/* Generated from the darc-ffi Rust sources; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result status of every fallible call in this interface.
typedef enum {
  // The call succeeded and all out-parameters are filled.
  DARC_STATUS_OK = 0,
  // A required pointer argument was NULL.
  DARC_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  DARC_STATUS_INVALID_UTF8 = 2,
  // Invalid arguments, configuration, or input files.
  DARC_STATUS_INVALID_ARGUMENT = 3,
  // The call failed while running (I/O, numerical blow-up).
  DARC_STATUS_RUNTIME_ERROR = 4,
  // An internal invariant was violated; the library caught a panic.
  DARC_STATUS_PANIC = 5,
} DarcStatus;

// A possibly incomplete data matrix (opaque).
typedef struct DarcDataset DarcDataset;

// Everything a training run produced (opaque).
typedef struct DarcTrainResult DarcTrainResult;

// Edge-recovery quality of an estimated graph against the ground truth.
typedef struct {
  // False discovery rate over directed edges; 0 when nothing is estimated.
  double fdr;
  // True positive rate over directed edges; 0 when the truth is empty.
  double tpr;
  // Structural Hamming distance (a reversed edge costs 1).
  uint64_t shd;
  uint64_t true_positives;
  uint64_t false_positives;
  uint64_t false_negatives;
  // Estimated edges whose reverse is a true edge.
  uint64_t reversed;
} DarcGraphMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the library version as a static NUL-terminated string.
const char *darc_version(void);

// Returns the message of the most recent failure on this thread, or an
// empty string if nothing has failed yet. The pointer is valid until the
// next failing darc call on the same thread.
const char *darc_last_error_message(void);

// Builds a dataset from a dense row-major matrix.
//
// `mask` may be NULL (fully observed) or point to `rows * cols` bytes where
// 1 marks an observed cell and 0 a missing one. Masked cells of `values`
// are ignored.
//
// # Safety
// `values` must point to `rows * cols` readable doubles and `mask`, when
// non-NULL, to `rows * cols` readable bytes; `out` must be a valid pointer.
DarcStatus darc_dataset_from_dense(const double *values,
                                   const uint8_t *mask,
                                   size_t rows,
                                   size_t cols,
                                   DarcDataset **out);

// Loads a dataset from a CSV file with a header row.
//
// Cells equal to `missing_token` (NULL means the empty string) are treated
// as missing.
//
// # Safety
// `path` must be a NUL-terminated string; `missing_token` NULL or the same;
// `out` must be a valid pointer.
DarcStatus darc_dataset_load_csv(const char *path, const char *missing_token, DarcDataset **out);

// Generates a synthetic dataset from a JSON configuration.
//
// `config_json` is a JSON object with any of the keys `d`, `n`, `scheme`,
// `sem`, `noise`, `missing_rate`, and `seed`; `"{}"` selects all defaults.
// The result is identical to what the command-line `generate` writes for
// the same configuration. When `truth` is non-NULL it receives the
// ground-truth adjacency matrix and `truth_len` must equal `d * d`.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be valid;
// `truth` must be NULL or point to `truth_len` writable bytes.
DarcStatus darc_generate(const char *config_json,
                         DarcDataset **out,
                         uint8_t *truth,
                         size_t truth_len);

// Number of rows (samples).
//
// # Safety
// `dataset` must be a live handle from this library; `out` must be valid.
DarcStatus darc_dataset_rows(const DarcDataset *dataset, size_t *out);

// Number of columns (variables).
//
// # Safety
// `dataset` must be a live handle from this library; `out` must be valid.
DarcStatus darc_dataset_cols(const DarcDataset *dataset, size_t *out);

// Number of missing cells.
//
// # Safety
// `dataset` must be a live handle from this library; `out` must be valid.
DarcStatus darc_dataset_masked_count(const DarcDataset *dataset, size_t *out);

// Releases a dataset handle. NULL is a no-op.
//
// # Safety
// `dataset` must be NULL or a handle not freed before.
void darc_dataset_free(DarcDataset *dataset);

// Runs the full structure search on a dataset.
//
// `config_json` is a JSON object of training settings (see the library's
// `TrainConfig`); `"{}"` selects all defaults. Blocks until training
// finishes.
//
// # Safety
// `dataset` must be a live handle; `config_json` a NUL-terminated string;
// `out` a valid pointer.
DarcStatus darc_train_run(const DarcDataset *dataset,
                          const char *config_json,
                          DarcTrainResult **out);

// Number of variables the result's graphs are defined over.
//
// # Safety
// `result` must be a live handle; `out` must be valid.
DarcStatus darc_result_dim(const DarcTrainResult *result, size_t *out);

// Number of completed training epochs.
//
// # Safety
// `result` must be a live handle; `out` must be valid.
DarcStatus darc_result_epochs(const DarcTrainResult *result, size_t *out);

// Whether training ever sampled an acyclic graph (and so has a best graph).
//
// # Safety
// `result` must be a live handle; `out` must be valid.
DarcStatus darc_result_has_best(const DarcTrainResult *result, bool *out);

// Copies the best scoring adjacency matrix into `buf` (row-major, `d * d`).
//
// Fails if no acyclic graph was ever sampled or `len != d * d`.
//
// # Safety
// `result` must be a live handle; `buf` must point to `len` writable bytes.
DarcStatus darc_result_best_adjacency(const DarcTrainResult *result, uint8_t *buf, size_t len);

// Copies the pruned best adjacency matrix into `buf` (row-major, `d * d`).
//
// Fails under the same conditions as `darc_result_best_adjacency`.
//
// # Safety
// `result` must be a live handle; `buf` must point to `len` writable bytes.
DarcStatus darc_result_pruned_adjacency(const DarcTrainResult *result, uint8_t *buf, size_t len);

// Score of the best graph (lower is better). Fails if there is none.
//
// # Safety
// `result` must be a live handle; `out` must be valid.
DarcStatus darc_result_best_score(const DarcTrainResult *result, double *out);

// Reward of the best graph (higher is better). Fails if there is none.
//
// # Safety
// `result` must be a live handle; `out` must be valid.
DarcStatus darc_result_best_reward(const DarcTrainResult *result, double *out);

// Releases a training-result handle. NULL is a no-op.
//
// # Safety
// `result` must be NULL or a handle not freed before.
void darc_result_free(DarcTrainResult *result);

// Compares an estimated graph against the ground truth.
//
// Both graphs are row-major `d * d` 0/1 buffers with zero diagonals.
//
// # Safety
// `estimated` and `truth` must each point to `d * d` readable bytes; `out`
// must be valid.
DarcStatus darc_graph_metrics(const uint8_t *estimated,
                              const uint8_t *truth,
                              size_t d,
                              DarcGraphMetrics *out);

// Evaluates the acyclicity functional on a weighted row-major `d * d`
// matrix. The value is 0 exactly when the graph is acyclic and grows with
// cycle strength.
//
// # Safety
// `matrix` must point to `d * d` readable doubles; `out` must be valid.
DarcStatus darc_acyclicity(const double *matrix, size_t d, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DARC_H */
