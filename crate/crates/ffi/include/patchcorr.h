#ifndef PATCHCORR_H
#define PATCHCORR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_ARGUMENT = 1,
  PC_STATUS_INVALID_UTF8 = 2,
  PC_STATUS_IO = 3,
  PC_STATUS_PARSE = 4,
  PC_STATUS_LENGTH_MISMATCH = 5,
  PC_STATUS_BUFFER_TOO_SMALL = 6,
  PC_STATUS_INVALID_INPUT = 7,
  PC_STATUS_UNSUPPORTED = 8,
  PC_STATUS_PANIC = 9,
} PcStatus;

// A trained classifier loaded from a model JSON file.
typedef struct PcModel PcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. The pointer stays
// valid until the next call into this library from the same thread.
const char *pc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pc_version(void);

// Loads a model JSON file written by `patchcorr train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PcStatus pc_model_load(const char *path, struct PcModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`pc_model_load`] and not be used afterwards.
void pc_model_free(struct PcModel *model);

// Number of features the model expects.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum PcStatus pc_model_feature_count(const struct PcModel *model, size_t *out);

// Short learner name (`lr`, `nb`, `dt`, `rf`, `gbt` or `dnn`) as a static
// string, or null for a null handle.
//
// # Safety
// `model` must be a live handle or null.
const char *pc_model_kind(const struct PcModel *model);

// Probability that one patch is correct.
//
// # Safety
// `features` must point to `len` doubles; `out` must be valid.
enum PcStatus pc_model_predict(const struct PcModel *model,
                               const double *features,
                               size_t len,
                               double *out);

// Predicts `rows` patches stored row-major with `cols` features each.
//
// # Safety
// `matrix` must hold `rows * cols` doubles and `out` room for `rows`.
enum PcStatus pc_model_predict_batch(const struct PcModel *model,
                                     const double *matrix,
                                     size_t rows,
                                     size_t cols,
                                     double *out);

// Shapley contributions of one prediction, against a background matrix
// (`bg_rows` x feature count, row-major). Writes `feature_count`
// contributions to `out` and the base value to `base`. Tree models are
// explained in probability space (dt, rf) or margin space (gbt); logistic
// regression in margin space. Naive Bayes and networks are refused.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum PcStatus pc_model_explain(const struct PcModel *model,
                               const double *background,
                               size_t bg_rows,
                               const double *features,
                               size_t len,
                               double *out,
                               size_t out_len,
                               double *base);

// Length of a crossed vector for embeddings of dimension `n`: `2n + 2`.
size_t pc_crossed_len(size_t n);

// Crosses buggy and patched embeddings of dimension `n` into
// `[patched - buggy | patched * buggy | cosine | euclidean similarity]`.
//
// # Safety
// `buggy` and `patched` must hold `n` doubles and `out` `out_len`.
enum PcStatus pc_cross(const double *buggy,
                       const double *patched,
                       size_t n,
                       double *out,
                       size_t out_len);

// Cosine similarity; 0 when either vector is all zeros.
//
// # Safety
// `a` and `b` must hold `n` doubles; `out` must be valid.
enum PcStatus pc_cosine(const double *a, const double *b, size_t n, double *out);

// Rank-based ROC AUC; `labels` are 1 (correct) or 0 (incorrect).
//
// # Safety
// `scores` and `labels` must hold `n` elements; `out` must be valid.
enum PcStatus pc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Number of engineered features.
size_t pc_engineered_feature_count(void);

// Static name of engineered feature `index`, or null when out of range.
const char *pc_engineered_feature_name(size_t index);

// Engineered features of a single-file unified diff, in registry order.
//
// # Safety
// `diff_text` must be NUL-terminated and `out` hold `out_len` doubles.
enum PcStatus pc_engineered_features(const char *diff_text, double *out, size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHCORR_H */
