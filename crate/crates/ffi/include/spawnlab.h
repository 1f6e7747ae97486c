#ifndef SPAWNLAB_H
#define SPAWNLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum SpawnlabStatus {
  SPAWNLAB_STATUS_OK = 0,
  SPAWNLAB_STATUS_NULL_POINTER = 1,
  SPAWNLAB_STATUS_INVALID_ARGUMENT = 2,
  SPAWNLAB_STATUS_IO = 3,
  SPAWNLAB_STATUS_PARSE = 4,
  SPAWNLAB_STATUS_SHAPE = 5,
  SPAWNLAB_STATUS_UNKNOWN_LABEL = 6,
  SPAWNLAB_STATUS_DEGENERATE = 7,
  SPAWNLAB_STATUS_NUMERICAL = 8,
  SPAWNLAB_STATUS_PANIC = 9,
} SpawnlabStatus;

/**
 * A loaded checkpoint.
 */
typedef struct SpawnlabModel SpawnlabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *spawnlab_last_error(void);

/**
 * Loads `checkpoint.json` from `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpawnlabStatus spawnlab_model_load(const char *path, struct SpawnlabModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`spawnlab_model_load`] and not be used again.
 */
void spawnlab_model_free(struct SpawnlabModel *model);

/**
 * Speaker embedding width, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t spawnlab_model_speaker_dim(const struct SpawnlabModel *model);

/**
 * Writes `log p(s | locale, gender)` to `*out`.
 *
 * # Safety
 * String arguments must be NUL-terminated, `s` must hold `len` doubles and
 * `out` must be valid.
 */
enum SpawnlabStatus spawnlab_prior_log_prob(const struct SpawnlabModel *model,
                                            const char *locale,
                                            const char *gender,
                                            const double *s,
                                            size_t len,
                                            double *out);

/**
 * Draws one speaker embedding at `temperature` into `out[0..len]`; `len`
 * must equal the speaker dimension. The draw matches the first sample of
 * `spawnlab spawn` with the same seed.
 *
 * # Safety
 * String arguments must be NUL-terminated and `out` must hold `len` doubles.
 */
enum SpawnlabStatus spawnlab_sample_speaker(const struct SpawnlabModel *model,
                                            const char *locale,
                                            const char *gender,
                                            double temperature,
                                            uint64_t seed,
                                            double *out,
                                            size_t len);

/**
 * Cosine distance `1 - cos(a, b)` of two length-`len` vectors.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles and `out` must be valid.
 */
enum SpawnlabStatus spawnlab_cosine_distance(const double *a,
                                             const double *b,
                                             size_t len,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPAWNLAB_H */
