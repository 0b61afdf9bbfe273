#ifndef CTQUANT_H
#define CTQUANT_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Biomarker status codes used in the `statuses` arrays.
#define CTQ_MEASUREMENT_OK 0

#define CTQ_MEASUREMENT_EMPTY 1

#define CTQ_MEASUREMENT_FAILED 2

typedef enum CtqStatus {
  CTQ_STATUS_OK = 0,
  CTQ_STATUS_NULL_ARGUMENT = 1,
  CTQ_STATUS_INVALID_STRING = 2,
  CTQ_STATUS_INVALID_ARGUMENT = 3,
  CTQ_STATUS_BUFFER_TOO_SMALL = 4,
  CTQ_STATUS_VOLUME = 5,
  CTQ_STATUS_BIOMARKER = 6,
  CTQ_STATUS_MODEL = 7,
  CTQ_STATUS_PANIC = 8,
} CtqStatus;

// Opaque handle to a loaded fusion model.
typedef struct CtqModel CtqModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next ctq_* call on the same thread.
const char *ctq_last_error(void);

// Number of scalar biomarkers.
uintptr_t ctq_biomarker_count(void);

// Number of model features: the biomarkers followed by the deep vector.
uintptr_t ctq_feature_count(void);

// Static name of feature `index`, or null when out of range.
const char *ctq_feature_name(uintptr_t index);

// Computes every biomarker the supplied masks allow. Mask paths may be
// null; the corresponding biomarkers are reported as failed. `values` and
// `statuses` must each hold at least `len` elements, `len >=
// ctq_biomarker_count()`.
//
// # Safety
// Paths must be null or NUL-terminated strings; `values` and `statuses`
// must be writable for `len` elements.
enum CtqStatus ctq_extract_biomarkers(const char *volume,
                                      const char *pericardium,
                                      const char *calcium,
                                      const char *aorta,
                                      const char *lungs,
                                      double *values,
                                      uint8_t *statuses,
                                      uintptr_t len);

// Loads and verifies a model file. On success `*out` owns a handle that
// must be released with [`ctq_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CtqStatus ctq_model_load(const char *path, struct CtqModel **out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from [`ctq_model_load`] not yet freed.
void ctq_model_free(struct CtqModel *model);

// Width of the deep feature vector the model expects.
//
// # Safety
// `model` must be a live handle.
uintptr_t ctq_model_deep_width(const struct CtqModel *model);

// Predicts the risk probability for one scan and writes the per-feature
// contribution scores, in [`ctq_feature_name`] order, to `scores`.
// Biomarker values are raw (unnormalised) and `statuses` uses the
// `CTQ_MEASUREMENT_*` codes.
//
// # Safety
// `model` must be a live handle; `deep` readable for `deep_len`,
// `values` and `statuses` readable for `biomarker_len`, `scores` writable
// for `scores_len` elements and `probability` writable.
enum CtqStatus ctq_model_predict(const struct CtqModel *model,
                                 const double *deep,
                                 uintptr_t deep_len,
                                 const double *values,
                                 const uint8_t *statuses,
                                 uintptr_t biomarker_len,
                                 double *probability,
                                 double *scores,
                                 uintptr_t scores_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTQUANT_H */
