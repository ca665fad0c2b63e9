#ifndef SINMOTION_H
#define SINMOTION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_ARGUMENT = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_CONFIG = 3,
  SM_STATUS_SHAPE = 4,
  SM_STATUS_PARSE = 5,
  SM_STATUS_IO = 6,
  SM_STATUS_CHECKPOINT = 7,
  SM_STATUS_NON_FINITE = 8,
  SM_STATUS_DIVERGENCE = 9,
  SM_STATUS_BUFFER_TOO_SMALL = 10,
  SM_STATUS_PANIC = 11,
} SmStatus;

/**
 * Trained model with its normalizer and skeleton.
 */
typedef struct SmModel SmModel;

/**
 * Normalized motion, `frames × features` row-major.
 */
typedef struct SmMotion SmMotion;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message of this thread, or null after a successful call. The
 * pointer stays valid until the next call on the same thread.
 */
const char *sm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sm_version(void);

/**
 * Checks `config_text` (`key = value` lines) without using it.
 *
 * # Safety
 * `config_text` must be a valid NUL-terminated string.
 */
enum SmStatus sm_config_check(const char *config_text);

/**
 * Trains a model on a BVH file, or on the bundled walk when `bvh_path` is
 * null. `config_text` overrides the defaults and may be null.
 *
 * # Safety
 * Non-null strings must be NUL-terminated; `out` must be writable.
 */
enum SmStatus sm_train(const char *bvh_path, const char *config_text, struct SmModel **out);

/**
 * # Safety
 * `checkpoint_path` must be NUL-terminated; `out` must be writable.
 */
enum SmStatus sm_model_load(const char *checkpoint_path, struct SmModel **out);

/**
 * # Safety
 * `model` must be a live handle; `checkpoint_path` must be NUL-terminated.
 */
enum SmStatus sm_model_save(const struct SmModel *model, const char *checkpoint_path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sm_model_free(struct SmModel *model);

/**
 * Frame count of the training motion; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sm_model_frames(const struct SmModel *model);

/**
 * Per-frame feature count; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sm_model_features(const struct SmModel *model);

/**
 * Samples one motion of `frames` frames (0: the training length). The
 * result matches the first sample of a crowd drawn with `seed`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum SmStatus sm_sample(const struct SmModel *model,
                        size_t frames,
                        uint64_t seed,
                        struct SmMotion **out);

/**
 * Regenerates `reference` outside the kept frame ranges
 * `[starts[i], ends[i])`, blending over `ramp_frames` frames.
 *
 * # Safety
 * `starts` and `ends` must each hold `count` values (or be null when
 * `count` is 0); handles must be live; `out` must be writable.
 */
enum SmStatus sm_compose(const struct SmModel *model,
                         const struct SmMotion *reference,
                         const size_t *starts,
                         const size_t *ends,
                         size_t count,
                         size_t ramp_frames,
                         uint64_t seed,
                         struct SmMotion **out);

/**
 * Resynthesizes `content` while following its low frequencies after
 * downsampling by `filter_factor`; a factor of 0 disables the guidance.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SmStatus sm_harmonize(const struct SmModel *model,
                           const struct SmMotion *content,
                           size_t filter_factor,
                           uint64_t seed,
                           struct SmMotion **out);

/**
 * Reads a BVH with `model`'s skeleton conventions and normalizes it.
 *
 * # Safety
 * `model` must be a live handle; `bvh_path` NUL-terminated; `out` writable.
 */
enum SmStatus sm_motion_read_bvh(const struct SmModel *model,
                                 const char *bvh_path,
                                 struct SmMotion **out);

/**
 * Denormalizes `motion` with `model` and writes it as BVH.
 *
 * # Safety
 * Handles must be live; `bvh_path` must be NUL-terminated.
 */
enum SmStatus sm_motion_write_bvh(const struct SmModel *model,
                                  const struct SmMotion *motion,
                                  const char *bvh_path);

/**
 * # Safety
 * `motion` must be null or a live handle.
 */
size_t sm_motion_frames(const struct SmMotion *motion);

/**
 * # Safety
 * `motion` must be null or a live handle.
 */
size_t sm_motion_features(const struct SmMotion *motion);

/**
 * Copies the normalized features into `buf`, which must hold
 * `frames × features` values.
 *
 * # Safety
 * `motion` must be a live handle; `buf` must be writable for `len` floats.
 */
enum SmStatus sm_motion_copy(const struct SmMotion *motion, float *buf, size_t len);

/**
 * # Safety
 * `motion` must be null or a handle not yet freed.
 */
void sm_motion_free(struct SmMotion *motion);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINMOTION_H */
