#ifndef MFGN_H
#define MFGN_H

/* Generated by cbindgen from the mfgn-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every API call.
typedef enum {
  // Success.
  MFGN_STATUS_OK = 0,
  // A required pointer was null or an argument was out of range.
  MFGN_STATUS_INVALID_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  MFGN_STATUS_INVALID_UTF8 = 2,
  // Malformed model text, dataset, schema, or query.
  MFGN_STATUS_INVALID_DATA = 3,
  // Learning failed or the training table is degenerate.
  MFGN_STATUS_FIT_FAILURE = 4,
  // The evidence has zero probability under the model.
  MFGN_STATUS_ZERO_EVIDENCE = 5,
  // The request is not supported in closed form.
  MFGN_STATUS_UNSUPPORTED = 6,
  // An internal invariant failed (a bug; never data-dependent by design).
  MFGN_STATUS_INTERNAL = 7,
} MfgnStatus;

// Opaque handle to a mixture model.
typedef struct MfgnModelHandle MfgnModelHandle;

// Opaque handle to a posterior over target attributes.
typedef struct MfgnPosteriorHandle MfgnPosteriorHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on the calling thread. Never
// null; empty before the first failure. The pointer is invalidated by the
// next failing call on the same thread.
const char *mfgn_last_error_message(void);

// Parses the `mfgn-model v1` text format into a model handle.
//
// # Safety
// `text` must be a NUL-terminated string; `out_model` must be a valid
// pointer. On success `*out_model` owns the model.
MfgnStatus mfgn_model_parse(const char *text, MfgnModelHandle **out_model);

// Renders a model back to the `mfgn-model v1` text format. The returned
// string is released with [`mfgn_string_free`].
//
// # Safety
// `model` must be a live handle; `out_text` must be a valid pointer.
MfgnStatus mfgn_model_render(const MfgnModelHandle *model, char **out_text);

// Fits a mixture to a dataset. `data` is the dataset text (header plus
// rows, uncertain-cell grammar) and `schema` the sidecar text; the fit is
// deterministic given `seed`.
//
// # Safety
// `data` and `schema` must be NUL-terminated strings; `out_model` must be
// a valid pointer. On success `*out_model` owns the model.
MfgnStatus mfgn_model_train(const char *data,
                            const char *schema,
                            size_t components,
                            uint64_t seed,
                            MfgnModelHandle **out_model);

// Number of attributes in the model's schema.
//
// # Safety
// `model` must be a live handle; `out_count` must be a valid pointer.
MfgnStatus mfgn_model_attribute_count(const MfgnModelHandle *model, size_t *out_count);

// Number of mixture components.
//
// # Safety
// `model` must be a live handle; `out_count` must be a valid pointer.
MfgnStatus mfgn_model_component_count(const MfgnModelHandle *model, size_t *out_count);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void mfgn_model_free(MfgnModelHandle *model);

// Conditions a model on a query and prepares posteriors for the target
// attributes. `targets` is a comma-separated attribute list; pass null to
// target every attribute the query leaves unobserved.
//
// # Safety
// `model` must be a live handle, `query` a NUL-terminated string,
// `targets` null or a NUL-terminated string, and `out_posterior` a valid
// pointer. On success `*out_posterior` owns the posterior.
MfgnStatus mfgn_posterior_new(const MfgnModelHandle *model,
                              const char *query,
                              const char *targets,
                              MfgnPosteriorHandle **out_posterior);

// Number of target attributes held by a posterior.
//
// # Safety
// `posterior` must be a live handle; `out_count` must be a valid pointer.
MfgnStatus mfgn_posterior_target_count(const MfgnPosteriorHandle *posterior, size_t *out_count);

// Natural log of the total evidence probability.
//
// # Safety
// `posterior` must be a live handle; `out_value` must be a valid pointer.
MfgnStatus mfgn_posterior_log_evidence(const MfgnPosteriorHandle *posterior, double *out_value);

// Posterior mean and standard deviation of a continuous target.
//
// # Safety
// `posterior` must be a live handle, `attr` a NUL-terminated string, and
// `out_mean`/`out_std` valid pointers.
MfgnStatus mfgn_posterior_mean_std(const MfgnPosteriorHandle *posterior,
                                   const char *attr,
                                   double *out_mean,
                                   double *out_std);

// Posterior category distribution of a symbolic target. Writes the
// probabilities (in schema label order) into `out_probs` and the category
// count into `out_count`; `capacity` must be at least that count.
//
// # Safety
// `posterior` must be a live handle, `attr` a NUL-terminated string,
// `out_probs` an array of at least `capacity` doubles, and `out_count` a
// valid pointer.
MfgnStatus mfgn_posterior_category_probs(const MfgnPosteriorHandle *posterior,
                                         const char *attr,
                                         double *out_probs,
                                         size_t capacity,
                                         size_t *out_count);

// Index (in schema label order) of the most probable category of a
// symbolic target.
//
// # Safety
// `posterior` must be a live handle, `attr` a NUL-terminated string, and
// `out_index` a valid pointer.
MfgnStatus mfgn_posterior_map_category(const MfgnPosteriorHandle *posterior,
                                       const char *attr,
                                       size_t *out_index);

// Posterior density of a continuous target at `x`.
//
// # Safety
// `posterior` must be a live handle, `attr` a NUL-terminated string, and
// `out_value` a valid pointer.
MfgnStatus mfgn_posterior_pdf(const MfgnPosteriorHandle *posterior,
                              const char *attr,
                              double x,
                              double *out_value);

// Releases a posterior handle. Null is ignored.
//
// # Safety
// `posterior` must be null or a handle not yet freed.
void mfgn_posterior_free(MfgnPosteriorHandle *posterior);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `text` must be null or a string returned by this library, not yet freed.
void mfgn_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFGN_H */
