#ifndef CRYDET_H
#define CRYDET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Width of the backbone feature vector.
 */
#define CRYDET_FEATURE_DIM 224

/**
 * Side of the square log-Mel input the backbone expects.
 */
#define CRYDET_INPUT_SIZE 64

typedef enum {
  CRYDET_STATUS_OK = 0,
  CRYDET_STATUS_NULL_POINTER = 1,
  CRYDET_STATUS_INVALID_ARGUMENT = 2,
  CRYDET_STATUS_IO = 3,
  CRYDET_STATUS_FORMAT = 4,
  CRYDET_STATUS_DIMENSION = 5,
  CRYDET_STATUS_BUFFER_TOO_SMALL = 6,
  CRYDET_STATUS_PANIC = 7,
} CrydetStatus;

/**
 * Log-Mel front-end presets.
 */
typedef enum {
  /**
   * 8 kHz, 1 s windows, 64×64 output.
   */
  CRYDET_PROFILE_BLAZENET = 0,
  /**
   * 8 kHz, 5 s windows, 64×64 output.
   */
  CRYDET_PROFILE_BLAZENET5S = 1,
  /**
   * 16 kHz, 1 s windows, 96×64 output.
   */
  CRYDET_PROFILE_EMBEDDING = 2,
} CrydetProfile;

/**
 * Opaque BlazeNet classifier.
 */
typedef struct CrydetBackbone CrydetBackbone;

/**
 * Opaque anomaly head.
 */
typedef struct CrydetHead CrydetHead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *crydet_version(void);

/**
 * Message of the last failure on this thread, or NULL if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *crydet_last_error(void);

/**
 * Creates a randomly initialized backbone.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
CrydetStatus crydet_backbone_new(uint64_t seed, CrydetBackbone **out);

/**
 * Loads backbone weights from a CRYD file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
CrydetStatus crydet_backbone_load(const char *path, CrydetBackbone **out);

/**
 * Writes backbone weights to a CRYD file.
 *
 * # Safety
 * `net` must come from this library; `path` must be NUL-terminated.
 */
CrydetStatus crydet_backbone_save(const CrydetBackbone *net, const char *path);

/**
 * Releases a backbone. NULL is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void crydet_backbone_free(CrydetBackbone *net);

/**
 * Number of trainable parameters, or 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or come from this library.
 */
size_t crydet_backbone_param_count(const CrydetBackbone *net);

/**
 * Runs the backbone on one 64×64 row-major log-Mel spectrogram.
 * `feature_out` receives 224 values; `logits_out` (may be NULL) receives
 * the two class logits, cry second.
 *
 * # Safety
 * `spec` must hold 4096 floats, `feature_out` room for 224 and
 * `logits_out`, when not NULL, room for 2.
 */
CrydetStatus crydet_backbone_forward(const CrydetBackbone *net,
                                     const float *spec,
                                     float *feature_out,
                                     float *logits_out);

/**
 * Cry probability of every non-overlapping one-second window of a clip at
 * any sample rate. `n_frames_out` always receives the window count; if
 * `capacity` is smaller, nothing else is written and
 * `CRYDET_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `samples` must hold `n_samples` floats, `scores_out` room for
 * `capacity` floats (may be NULL when `capacity` is 0).
 */
CrydetStatus crydet_backbone_score_clip(const CrydetBackbone *net,
                                        const float *samples,
                                        size_t n_samples,
                                        uint32_t sample_rate,
                                        float *scores_out,
                                        size_t capacity,
                                        size_t *n_frames_out);

/**
 * Log-Mel spectrogram of exactly one example window. The clip is
 * resampled to the profile rate first and must then be one window long.
 * Writes frames×mels row-major values; `frames_out`/`mels_out` always
 * receive the shape.
 *
 * # Safety
 * `samples` must hold `n_samples` floats and `out` room for `capacity`.
 */
CrydetStatus crydet_log_mel(const float *samples,
                            size_t n_samples,
                            uint32_t sample_rate,
                            CrydetProfile profile,
                            float *out,
                            size_t capacity,
                            size_t *frames_out,
                            size_t *mels_out);

/**
 * Loads anomaly-head weights from a CRYD file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
CrydetStatus crydet_head_load(const char *path, CrydetHead **out);

/**
 * Creates a randomly initialized head for `input_dim`-wide features.
 *
 * # Safety
 * `out` must be writable.
 */
CrydetStatus crydet_head_new(size_t input_dim, uint64_t seed, CrydetHead **out);

/**
 * Releases a head. NULL is ignored.
 *
 * # Safety
 * `head` must come from this library and not be used afterwards.
 */
void crydet_head_free(CrydetHead *head);

/**
 * Feature width the head accepts, or 0 for NULL.
 *
 * # Safety
 * `head` must be NULL or come from this library.
 */
size_t crydet_head_input_dim(const CrydetHead *head);

/**
 * Scores `n_rows` row-major feature vectors of width `dim`. Writes one
 * score in (0, 1) per row and, when `magnitudes_out` is not NULL, the
 * refined-feature L2 norm per row.
 *
 * # Safety
 * `features` must hold `n_rows * dim` floats; the outputs room for
 * `n_rows` floats each.
 */
CrydetStatus crydet_head_score(const CrydetHead *head,
                               const float *features,
                               size_t n_rows,
                               size_t dim,
                               float *scores_out,
                               float *magnitudes_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRYDET_H */
