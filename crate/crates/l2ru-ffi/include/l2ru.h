/* C interface for L2-gain-bounded state-space models: model loading, inference, and certificate checks. */

#ifndef L2RU_H
#define L2RU_H

/* Generated by cbindgen from the l2ru-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an interface call. Anything other than `Ok` leaves the output
 * arguments untouched; consult `l2ru_last_error` for a diagnostic.
 */
typedef enum L2ruStatus {
  /**
   * The call succeeded.
   */
  L2RU_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  L2RU_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  L2RU_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be read.
   */
  L2RU_STATUS_IO = 3,
  /**
   * The input text was not a valid model or system description.
   */
  L2RU_STATUS_PARSE = 4,
  /**
   * Arguments were structurally invalid (dimension mismatch, bad flag).
   */
  L2RU_STATUS_INVALID_ARGUMENT = 5,
  /**
   * A numerical routine failed on otherwise well-formed data.
   */
  L2RU_STATUS_NUMERICAL = 6,
  /**
   * An internal invariant was violated; the library state is still sound.
   */
  L2RU_STATUS_INTERNAL = 7,
} L2ruStatus;

/**
 * Owned model behind an opaque pointer.
 */
typedef struct L2ruModelHandle L2ruModelHandle;

/**
 * Owned state-space system behind an opaque pointer.
 */
typedef struct L2ruSystemHandle L2ruSystemHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never null, never freed.
 */
const char *l2ru_version(void);

/**
 * Message for the most recent failure on the calling thread, or null if no
 * call has failed yet. The pointer stays valid until the next failing call
 * on the same thread; copy it if you need to keep it.
 */
const char *l2ru_last_error(void);

/**
 * Loads a model from a JSON file written by the trainer or exporter.
 *
 * On success stores a new handle in `out`; release it with
 * `l2ru_model_free`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_load_file(const char *path, struct L2ruModelHandle **out);

/**
 * Loads a model from an in-memory JSON string.
 *
 * On success stores a new handle in `out`; release it with
 * `l2ru_model_free`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_load_json(const char *json, struct L2ruModelHandle **out);

/**
 * Releases a model handle. Passing null is a no-op; passing the same
 * handle twice is undefined behavior.
 *
 * # Safety
 * `model` must be null or a handle produced by a model load call.
 */
void l2ru_model_free(struct L2ruModelHandle *model);

/**
 * Number of input channels the model expects per sample.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_input_dim(const struct L2ruModelHandle *model, size_t *out);

/**
 * Number of output channels the model produces per sample.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_output_dim(const struct L2ruModelHandle *model, size_t *out);

/**
 * Number of stacked state-space layers in the model.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_layer_count(const struct L2ruModelHandle *model, size_t *out);

/**
 * The gain bound the model was built to respect.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_gamma_hat(const struct L2ruModelHandle *model, double *out);

/**
 * Recomputes the certified gain bound from the stored stage certificates;
 * equals the prescribed bound up to floating-point rounding.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_model_certified_gain(const struct L2ruModelHandle *model, double *out);

/**
 * Re-verifies every stored stage certificate against its system and the
 * overall budget. Writes 1 if everything checks out, 0 otherwise; a result
 * of 0 is still `Ok` at the call level.
 *
 * # Safety
 * `model` must be a live handle; `out_certified` must point to writable
 * storage.
 */
enum L2ruStatus l2ru_model_certify(const struct L2ruModelHandle *model, int *out_certified);

/**
 * Runs the model on an input sequence from zero initial state.
 *
 * `input` holds `sample_count` rows of `l2ru_model_input_dim` values each;
 * `output` must have room for `sample_count` rows of
 * `l2ru_model_output_dim` values. `engine` selects the simulation path:
 * 0 = per-sample recursion, 1 = chunked prefix evaluation (parallel over
 * worker threads, same result to within accumulation order).
 *
 * # Safety
 * `model` must be a live handle; `input` and `output` must point to
 * buffers of the sizes stated above.
 */
enum L2ruStatus l2ru_model_forward(const struct L2ruModelHandle *model,
                                   const double *input,
                                   size_t sample_count,
                                   int engine,
                                   double *output);

/**
 * Loads a state-space system from a JSON file (the format the CLI reads
 * and writes).
 *
 * On success stores a new handle in `out`; release it with
 * `l2ru_system_free`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_system_load_file(const char *path, struct L2ruSystemHandle **out);

/**
 * Loads a state-space system from an in-memory JSON string.
 *
 * On success stores a new handle in `out`; release it with
 * `l2ru_system_free`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_system_load_json(const char *json, struct L2ruSystemHandle **out);

/**
 * Releases a system handle. Passing null is a no-op; passing the same
 * handle twice is undefined behavior.
 *
 * # Safety
 * `system` must be null or a handle produced by a system load call.
 */
void l2ru_system_free(struct L2ruSystemHandle *system);

/**
 * State, input, and output dimensions of a loaded system. Any of the
 * output pointers may be null to skip that value.
 *
 * # Safety
 * `system` must be a live handle; non-null outputs must be writable.
 */
enum L2ruStatus l2ru_system_dims(const struct L2ruSystemHandle *system,
                                 size_t *out_state,
                                 size_t *out_input,
                                 size_t *out_output);

/**
 * Peak frequency-response gain of a stable system, estimated by a dense
 * frequency sweep refined to the given relative tolerance.
 *
 * # Safety
 * `system` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_system_hinf_norm(const struct L2ruSystemHandle *system,
                                      double rel_tol,
                                      double *out);

/**
 * Smallest certifiable gain bound of a stable system, found by bisecting
 * over feasibility of the gain certificate.
 *
 * # Safety
 * `system` must be a live handle; `out` must point to writable storage.
 */
enum L2ruStatus l2ru_system_certified_bound(const struct L2ruSystemHandle *system,
                                            double rel_tol,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* L2RU_H */
