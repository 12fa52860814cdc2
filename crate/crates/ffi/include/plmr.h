#ifndef PLMR_H
#define PLMR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define PLMR_OK 0

// A required pointer argument was null.
#define PLMR_ERR_NULL 1

// A string argument was not valid UTF-8.
#define PLMR_ERR_UTF8 2

#define PLMR_ERR_IO 3

// Malformed JSON, log line, catalog or model document.
#define PLMR_ERR_PARSE 4

// Inputs parsed but violate a precondition.
#define PLMR_ERR_VALIDATION 5

#define PLMR_ERR_DIMENSION 6

#define PLMR_ERR_UNKNOWN_STUDENT 7

#define PLMR_ERR_DIVERGENCE 8

// Invalid protocol/target combination or an empty split.
#define PLMR_ERR_PROTOCOL 9

// A Rust panic was caught at the boundary.
#define PLMR_ERR_PANIC 10

// An ingested and featurized course.
typedef struct PlmrCourse PlmrCourse;

// A knowledge-tracing model with per-item guess and slip.
typedef struct PlmrKtModel PlmrKtModel;

// A fitted personalized multi-regression model.
typedef struct PlmrModel PlmrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. Valid until
// the next failing call on the same thread.
const char *plmr_last_error(void);

// Library version as a static string.
const char *plmr_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void plmr_string_free(char *s);

// Reads a catalog and event log and featurizes every graded observation.
//
// # Safety
// Paths must be NUL-terminated; `out` must be writable.
int32_t plmr_course_load(const char *log_path, const char *catalog_path, struct PlmrCourse **out);

// # Safety
// `course` must come from [`plmr_course_load`] or be null.
void plmr_course_free(struct PlmrCourse *course);

// Number of graded (student, homework) rows.
//
// # Safety
// Pointers must be valid.
int32_t plmr_course_num_rows(const struct PlmrCourse *course, size_t *out);

// Number of raw feature columns per row.
//
// # Safety
// Pointers must be valid.
int32_t plmr_course_num_features(const struct PlmrCourse *course, size_t *out);

// Copies the raw features of row `row` into `values` (length `len`, which
// must equal the feature count) and its grade into `grade`.
//
// # Safety
// `values` must hold `len` doubles.
int32_t plmr_course_row(const struct PlmrCourse *course,
                        size_t row,
                        double *values,
                        size_t len,
                        double *grade);

// Student id of row `row` as a newly allocated string.
//
// # Safety
// Pointers must be valid.
int32_t plmr_course_row_student(const struct PlmrCourse *course, size_t row, char **out);

// Runs one experiment described by a JSON experiment spec (missing fields
// take their defaults) and returns the metrics report as JSON.
//
// # Safety
// Pointers must be valid; `spec_json` NUL-terminated.
int32_t plmr_course_evaluate(const struct PlmrCourse *course,
                             const char *spec_json,
                             char **report_json);

// Fits PLMR on the training rows selected by a JSON experiment spec.
//
// # Safety
// Pointers must be valid; `spec_json` NUL-terminated.
int32_t plmr_course_train(const struct PlmrCourse *course,
                          const char *spec_json,
                          struct PlmrModel **out);

// # Safety
// `json` NUL-terminated; `out` writable.
int32_t plmr_model_from_json(const char *json, struct PlmrModel **out);

// # Safety
// Pointers must be valid.
int32_t plmr_model_to_json(const struct PlmrModel *model, char **out);

// Number of feature columns the model expects.
//
// # Safety
// Pointers must be valid.
int32_t plmr_model_num_features(const struct PlmrModel *model, size_t *out);

// Score `b_s + p_s' W f` for raw features `f` (the model's stored
// standardization is applied first).
//
// # Safety
// `features` must hold `len` doubles.
int32_t plmr_model_predict(const struct PlmrModel *model,
                           const char *student_id,
                           const double *features,
                           size_t len,
                           double *out);

// Sigmoid of [`plmr_model_predict`].
//
// # Safety
// `features` must hold `len` doubles.
int32_t plmr_model_predict_proba(const struct PlmrModel *model,
                                 const char *student_id,
                                 const double *features,
                                 size_t len,
                                 double *out);

// # Safety
// `model` must come from this library or be null.
void plmr_model_free(struct PlmrModel *model);

// Root mean squared error of two length-`n` arrays.
//
// # Safety
// Arrays must hold `n` doubles.
int32_t plmr_rmse(const double *pred, const double *truth, size_t n, double *out);

// Accuracy and F1 of binary labels (nonzero = positive).
//
// # Safety
// Arrays must hold `n` bytes.
int32_t plmr_accuracy_f1(const uint8_t *pred,
                         const uint8_t *truth,
                         size_t n,
                         double *accuracy,
                         double *f1);

// # Safety
// `json` NUL-terminated; `out` writable.
int32_t plmr_kt_from_json(const char *json, struct PlmrKtModel **out);

// Mastery probability before any response.
//
// # Safety
// Pointers must be valid.
int32_t plmr_kt_initial_mastery(const struct PlmrKtModel *model, double *out);

// Probability of a correct response on `item` at mastery `mastery`.
//
// # Safety
// Pointers must be valid.
int32_t plmr_kt_predict(const struct PlmrKtModel *model,
                        double mastery,
                        const char *item,
                        double *out);

// Mastery after observing a response (`correct` nonzero = correct),
// including the learning transition.
//
// # Safety
// Pointers must be valid.
int32_t plmr_kt_update(const struct PlmrKtModel *model,
                       double mastery,
                       const char *item,
                       int32_t correct,
                       double *out);

// # Safety
// `model` must come from this library or be null.
void plmr_kt_free(struct PlmrKtModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLMR_H */
