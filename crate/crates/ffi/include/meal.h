#ifndef MEAL_H
#define MEAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MealStatus {
  MEAL_STATUS_OK = 0,
  MEAL_STATUS_NULL_POINTER = 1,
  MEAL_STATUS_INVALID_ARGUMENT = 2,
  MEAL_STATUS_CONFIG = 3,
  MEAL_STATUS_SHAPE = 4,
  MEAL_STATUS_NUMERICAL = 5,
  MEAL_STATUS_LABEL = 6,
  MEAL_STATUS_EMPTY = 7,
  MEAL_STATUS_CHECKPOINT = 8,
  MEAL_STATUS_MISSING_FILE = 9,
  MEAL_STATUS_IO = 10,
  MEAL_STATUS_SERDE = 11,
  MEAL_STATUS_PANIC = 12,
} MealStatus;

// Opaque teacher-ensemble handle.
typedef struct MealEnsemble MealEnsemble;

// Opaque network handle.
typedef struct MealModel MealModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t meal_last_error_message(char *buf, size_t len);

// Builds a freshly initialized network. `tier` is one of `teacher-large`,
// `teacher-medium`, `student-small`, `student-tiny`.
//
// # Safety
// `tier` must be a NUL-terminated string; `out` must be writable.
enum MealStatus meal_model_build(const char *tier,
                                 size_t num_classes,
                                 size_t resolution,
                                 uint64_t seed,
                                 struct MealModel **out);

// Loads a network from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MealStatus meal_model_load(const char *path, struct MealModel **out);

// Writes the network's weights as a checkpoint file.
//
// # Safety
// `model` must come from this library; `path` must be a NUL-terminated string.
enum MealStatus meal_model_save(const struct MealModel *model, const char *path);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void meal_model_free(struct MealModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
size_t meal_model_num_classes(const struct MealModel *model);

// Expected input side length, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
size_t meal_model_resolution(const struct MealModel *model);

// Inference logits for `n` images of `resolution x resolution x 3`;
// writes `n * num_classes` values.
//
// # Safety
// `images` must hold `n * resolution * resolution * 3` values; `out` must hold `out_len`.
enum MealStatus meal_model_forward(const struct MealModel *model,
                                   const double *images,
                                   size_t n,
                                   double *out,
                                   size_t out_len);

// Builds an ensemble from copies of `k` models sharing classes and resolution.
//
// # Safety
// `models` must point to `k` valid model handles; `out` must be writable.
enum MealStatus meal_ensemble_new(const struct MealModel *const *models,
                                  size_t k,
                                  struct MealEnsemble **out);

// Releases an ensemble handle. Null is ignored.
//
// # Safety
// `ensemble` must come from this library and not be used afterwards.
void meal_ensemble_free(struct MealEnsemble *ensemble);

// Averaged teacher probabilities for `n` images; writes `n * num_classes` values.
//
// # Safety
// `images` must hold `n * resolution * resolution * 3` values; `out` must hold `out_len`.
enum MealStatus meal_ensemble_predict(const struct MealEnsemble *ensemble,
                                      const double *images,
                                      size_t n,
                                      double *out,
                                      size_t out_len);

// Mean KL(teacher || softmax(student)) over `n` rows of `c` classes. When
// `out_grad` is non-null it receives the `n * c` gradient w.r.t. the logits.
//
// # Safety
// Inputs must hold `n * c` values; `out_grad` must be null or hold `n * c`.
enum MealStatus meal_kl_loss(const double *teacher_probs,
                             const double *student_logits,
                             size_t n,
                             size_t c,
                             double *out_value,
                             double *out_grad);

// Mean soft-label cross-entropy; same conventions as [`meal_kl_loss`].
//
// # Safety
// Inputs must hold `n * c` values; `out_grad` must be null or hold `n * c`.
enum MealStatus meal_ce_loss(const double *teacher_probs,
                             const double *student_logits,
                             size_t n,
                             size_t c,
                             double *out_value,
                             double *out_grad);

// Mean binary cross-entropy of `n` probabilities against 0/1 labels.
//
// # Safety
// `labels` and `probs` must hold `n` values.
enum MealStatus meal_bce_loss(const double *labels,
                              const double *probs,
                              size_t n,
                              double *out_value);

// Mean per-class sigmoid cross-entropy for multi-label targets.
//
// # Safety
// Inputs must hold `n * c` values; `out_grad` must be null or hold `n * c`.
enum MealStatus meal_multilabel_sigmoid_ce(const double *targets,
                                           const double *logits,
                                           size_t n,
                                           size_t c,
                                           double *out_value,
                                           double *out_grad);

// Library version as a static NUL-terminated string.
const char *meal_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEAL_H */
