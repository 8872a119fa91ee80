#ifndef FACESHIELD_H
#define FACESHIELD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_ARGUMENT = 2,
  FS_STATUS_SHAPE_MISMATCH = 3,
  FS_STATUS_IO = 4,
  FS_STATUS_CHECKPOINT = 5,
  FS_STATUS_RUNTIME = 6,
  FS_STATUS_PANIC = 7,
} FsStatus;

/**
 * An RGB image with values in `[0, 1]`.
 */
typedef struct FsImage FsImage;

/**
 * A trained model stack with its swap settings.
 */
typedef struct FsStack FsStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on this thread.
 */
const char *fs_last_error(void);

/**
 * Loads the stack cached in `dir`, training it with `config_json` (a toy
 * training config; null for defaults) when absent or stale.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `config_json` null or NUL-terminated;
 * `out_stack` a valid pointer.
 */
enum FsStatus fs_stack_load_or_train(const char *dir,
                                     const char *config_json,
                                     struct FsStack **out_stack);

/**
 * Loads a saved stack without training.
 *
 * # Safety
 * `dir` must be NUL-terminated and `out_stack` valid.
 */
enum FsStatus fs_stack_load(const char *dir, struct FsStack **out_stack);

/**
 * Replaces the swap settings used by [`fs_swap`] with `config_json`.
 *
 * # Safety
 * `stack` must come from this library; `config_json` must be NUL-terminated.
 */
enum FsStatus fs_stack_set_swap_config(struct FsStack *stack, const char *config_json);

/**
 * Image shape `(height, width, channels)` the stack expects.
 *
 * # Safety
 * All pointers must be valid.
 */
enum FsStatus fs_stack_image_shape(const struct FsStack *stack,
                                   size_t *height,
                                   size_t *width,
                                   size_t *channels);

/**
 * Training seed of the stack.
 *
 * # Safety
 * `stack` must come from this library or be null.
 */
uint64_t fs_stack_seed(const struct FsStack *stack);

/**
 * # Safety
 * `stack` must come from this library (or be null) and not be used afterwards.
 */
void fs_stack_free(struct FsStack *stack);

/**
 * Creates an image from interleaved 8-bit RGB rows of `height * width * 3` bytes.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out_image` must be valid.
 */
enum FsStatus fs_image_from_rgb8(size_t height,
                                 size_t width,
                                 const uint8_t *data,
                                 size_t len,
                                 struct FsImage **out_image);

/**
 * Copies the image as interleaved 8-bit RGB into `buffer` (`len` must equal
 * `height * width * channels`).
 *
 * # Safety
 * `buffer` must point to `len` writable bytes.
 */
enum FsStatus fs_image_to_rgb8(const struct FsImage *image, uint8_t *buffer, size_t len);

/**
 * # Safety
 * `path` must be NUL-terminated and `out_image` valid.
 */
enum FsStatus fs_image_load_png(const char *path, struct FsImage **out_image);

/**
 * # Safety
 * `image` must come from this library and `path` be NUL-terminated.
 */
enum FsStatus fs_image_save_png(const struct FsImage *image, const char *path);

/**
 * # Safety
 * All pointers must be valid.
 */
enum FsStatus fs_image_shape(const struct FsImage *image,
                             size_t *height,
                             size_t *width,
                             size_t *channels);

/**
 * # Safety
 * `image` must come from this library (or be null) and not be used afterwards.
 */
void fs_image_free(struct FsImage *image);

/**
 * Protects `source` with the run settings in `config_json` (null for the
 * reference defaults). Writes the protected image and the final latent
 * infinity-norm distance from the source latent.
 *
 * # Safety
 * Handles must come from this library; `config_json` null or NUL-terminated;
 * output pointers valid.
 */
enum FsStatus fs_protect(const struct FsStack *stack,
                         const struct FsImage *source,
                         const char *config_json,
                         struct FsImage **out_image,
                         double *out_budget_linf);

/**
 * Swaps the identity of `source` onto `target`; `seed` offsets the stack's swap seed.
 *
 * # Safety
 * Handles must come from this library and `out_image` be valid.
 */
enum FsStatus fs_swap(const struct FsStack *stack,
                      const struct FsImage *source,
                      const struct FsImage *target,
                      uint64_t seed,
                      struct FsImage **out_image);

/**
 * Identity loss rate of a protected swap relative to the clean swap.
 * `out_clamped` is set to 1 when the baseline cosine hit the floor.
 *
 * # Safety
 * Handles must come from this library and output pointers be valid.
 */
enum FsStatus fs_att_id(const struct FsStack *stack,
                        const struct FsImage *source,
                        const struct FsImage *clean_swap,
                        const struct FsImage *protected_swap,
                        double *out_value,
                        int32_t *out_clamped);

/**
 * PSNR in dB; `+inf` for identical images.
 *
 * # Safety
 * Handles must come from this library and `out_value` be valid.
 */
enum FsStatus fs_psnr(const struct FsImage *a, const struct FsImage *b, double *out_value);

/**
 * # Safety
 * Handles must come from this library and `out_value` be valid.
 */
enum FsStatus fs_ssim(const struct FsImage *a, const struct FsImage *b, double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACESHIELD_H */
