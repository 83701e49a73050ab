#ifndef GAZELAB_H
#define GAZELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Side of the square eye patches accepted by the models.
#define GZ_PATCH_SIZE 64

typedef enum GzKernel {
  // `[[0,1,0],[1,-4,1],[0,1,0]]`.
  GZ_KERNEL_STANDARD = 0,
  // `[[0,1,0],[1,-4,1],[0,1,1]]`.
  GZ_KERNEL_CORNER = 1,
} GzKernel;

typedef enum GzStatus {
  GZ_STATUS_OK = 0,
  GZ_STATUS_NULL_POINTER = 1,
  GZ_STATUS_INVALID_ARGUMENT = 2,
  GZ_STATUS_RANGE = 3,
  GZ_STATUS_DATA = 4,
  GZ_STATUS_IO = 5,
  GZ_STATUS_CHECKPOINT = 6,
  GZ_STATUS_CONFIG = 7,
  GZ_STATUS_NUMERIC = 8,
  GZ_STATUS_DEGENERATE = 9,
  GZ_STATUS_PANIC = 10,
} GzStatus;

// Opaque trained gaze estimator.
typedef struct GzEstimator GzEstimator;

// Opaque trained generator.
typedef struct GzRedirector GzRedirector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gz_version(void);

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *gz_last_error(void);

// Unit gaze vector `[x, y, z]` for (yaw, pitch) in degrees.
//
// # Safety
// `out` must point to three writable doubles.
enum GzStatus gz_to_cartesian(double yaw, double pitch, double *out);

// Angle in degrees between two gaze directions given as (yaw, pitch).
//
// # Safety
// `out` must be a valid pointer to a double.
enum GzStatus gz_angular_error(double yaw_a,
                               double pitch_a,
                               double yaw_b,
                               double pitch_b,
                               double *out);

// Maps degrees into [−1, 1] by the per-axis maxima.
//
// # Safety
// `yaw_n` and `pitch_n` must be valid pointers to doubles.
enum GzStatus gz_normalize_gaze(double yaw,
                                double pitch,
                                double yaw_max,
                                double pitch_max,
                                double *yaw_n,
                                double *pitch_n);

// Inverse Laplacian variance of an RGB8 image.
//
// # Safety
// `pixels` must hold `width * height * 3` bytes and `out` must be a valid
// pointer to a double.
enum GzStatus gz_blurriness(const uint8_t *pixels,
                            uint32_t width,
                            uint32_t height,
                            enum GzKernel kernel,
                            double *out);

// Loads a generator checkpoint. On success `*out` owns a handle that
// must be released with [`gz_redirector_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum GzStatus gz_redirector_load(const char *path, struct GzRedirector **out);

// Redirects a 64×64 RGB8 patch to (yaw, pitch) in degrees, patch frame.
// `output` receives 64×64×3 bytes.
//
// # Safety
// `handle` must come from [`gz_redirector_load`]; `input` and `output`
// must each hold 12288 bytes.
enum GzStatus gz_redirector_redirect(const struct GzRedirector *handle,
                                     const uint8_t *input,
                                     double yaw,
                                     double pitch,
                                     uint8_t *output);

// Releases a redirector handle. Null is ignored.
//
// # Safety
// `handle` must come from [`gz_redirector_load`] and not be used again.
void gz_redirector_free(struct GzRedirector *handle);

// Loads an estimator checkpoint. Release with [`gz_estimator_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum GzStatus gz_estimator_load(const char *path, struct GzEstimator **out);

// Estimates (yaw, pitch) in degrees for a 64×64 RGB8 patch.
//
// # Safety
// `handle` must come from [`gz_estimator_load`]; `input` must hold 12288
// bytes; `yaw` and `pitch` must be valid pointers.
enum GzStatus gz_estimator_estimate(const struct GzEstimator *handle,
                                    const uint8_t *input,
                                    double *yaw,
                                    double *pitch);

// Releases an estimator handle. Null is ignored.
//
// # Safety
// `handle` must come from [`gz_estimator_load`] and not be used again.
void gz_estimator_free(struct GzEstimator *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAZELAB_H */
