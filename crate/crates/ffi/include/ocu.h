#ifndef OCU_H
#define OCU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OcuStatus {
  OCU_STATUS_OK = 0,
  OCU_STATUS_NULL_POINTER = 1,
  OCU_STATUS_INVALID_ARGUMENT = 2,
  OCU_STATUS_INVALID_GEOMETRY = 3,
  OCU_STATUS_DIMENSION_MISMATCH = 4,
  OCU_STATUS_NON_FINITE = 5,
  OCU_STATUS_IO = 6,
  OCU_STATUS_FORMAT = 7,
  OCU_STATUS_CONFIG = 8,
  OCU_STATUS_DIVERGED = 9,
  OCU_STATUS_BUFFER_TOO_SMALL = 10,
  OCU_STATUS_PANIC = 11,
} OcuStatus;

/**
 * A single OCU together with the input encoding and stride it runs with.
 */
typedef struct OcuModel OcuModel;

/**
 * A trained classifier or denoiser.
 */
typedef struct OcuNetwork OcuNetwork;

/**
 * Throughput (operations per second) and energy (J) estimates.
 */
typedef struct OcuPerf {
  uint64_t ops_conv;
  uint64_t ops_kernel;
  double speed_ocu;
  double speed_ock;
  double speed_ocl;
  double energy_modulation;
  double energy_detection;
  double energy_total;
} OcuPerf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread, NUL-terminated and
 * truncated to `capacity`. Returns the full message length in bytes.
 *
 * # Safety
 * `buffer` must be null or point to `capacity` writable bytes.
 */
size_t ocu_last_error(char *buffer, size_t capacity);

/**
 * Creates an OCU for `kernel_size × kernel_size` kernels with default
 * silicon-on-insulator geometry, `metaunits` per metaline and `layers`
 * diffraction regions, with phases drawn from `seed`.
 *
 * # Safety
 * `out` must point to writable storage for one handle pointer.
 */
enum OcuStatus ocu_model_new(size_t kernel_size,
                             size_t metaunits,
                             size_t layers,
                             bool amplitude_encoding,
                             uint64_t seed,
                             struct OcuModel **out);

/**
 * Loads the unit called `name` from a fit-kernel checkpoint.
 *
 * # Safety
 * `path` and `name` must be NUL-terminated strings; `out` must be writable.
 */
enum OcuStatus ocu_model_load(const char *path, const char *name, struct OcuModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void ocu_model_free(struct OcuModel *model);

/**
 * Number of input ports, `H²`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum OcuStatus ocu_model_num_inputs(const struct OcuModel *model, size_t *out);

/**
 * Detection gain κ.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum OcuStatus ocu_model_gain(const struct OcuModel *model, double *out);

/**
 * Trains the unit to reproduce the row-major kernel `values` (length
 * `H²`) on a seeded random pattern of side `pattern_size`. The final
 * per-pixel MSE on the pattern is written to `out_mse`.
 *
 * # Safety
 * `model` must be a live handle, `values` must hold `len` doubles and
 * `out_mse` must be null or writable.
 */
enum OcuStatus ocu_model_fit(struct OcuModel *model,
                             const double *values,
                             size_t len,
                             size_t pattern_size,
                             size_t epochs,
                             double learning_rate,
                             uint64_t seed,
                             double *out_mse);

/**
 * Side of the feature map for an `image_size` input.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum OcuStatus ocu_model_output_size(const struct OcuModel *model, size_t image_size, size_t *out);

/**
 * Convolves a single-channel `size × size` image (row-major, values in
 * `[0, 1]`) and writes the `G × G` feature map to `out`.
 *
 * # Safety
 * `image` must hold `size²` doubles and `out` must have room for
 * `out_len` doubles.
 */
enum OcuStatus ocu_model_convolve(const struct OcuModel *model,
                                  const double *image,
                                  size_t size,
                                  double *out,
                                  size_t out_len);

/**
 * Exact sliding-window correlation of a `size × size` image with a
 * row-major `kernel_size × kernel_size` kernel, stride 1, no padding.
 *
 * # Safety
 * `image` must hold `size²` doubles, `kernel` `kernel_size²` doubles and
 * `out` room for `out_len` doubles.
 */
enum OcuStatus ocu_conv2d_reference(const double *image,
                                    size_t size,
                                    const double *kernel,
                                    size_t kernel_size,
                                    double *out,
                                    size_t out_len);

/**
 * Loads a network checkpoint written by `train-classifier` or
 * `train-denoiser`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OcuStatus ocu_network_load(const char *path, struct OcuNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library not yet freed.
 */
void ocu_network_free(struct OcuNetwork *net);

/**
 * Predicted class of a `channels × size × size` image (channel-major).
 *
 * # Safety
 * `net` must be a live handle, `image` must hold `channels·size²` doubles
 * and `out_class` must be writable.
 */
enum OcuStatus ocu_network_classify(struct OcuNetwork *net,
                                    const double *image,
                                    size_t channels,
                                    size_t size,
                                    size_t *out_class);

/**
 * Denoises a single-channel `size × size` image; the clean estimate
 * (unclamped) is written to `out`.
 *
 * # Safety
 * `net` must be a live handle, `image` must hold `size²` doubles and
 * `out` room for `out_len` doubles.
 */
enum OcuStatus ocu_network_denoise(struct OcuNetwork *net,
                                   const double *image,
                                   size_t size,
                                   double *out,
                                   size_t out_len);

/**
 * Speed and energy of an optical convolution layer. `rate` is in baud,
 * `energy_per_bit` in joules and `detector_power` in watts.
 *
 * # Safety
 * `out` must be writable.
 */
enum OcuStatus ocu_perf(size_t kernel_size,
                        size_t channels,
                        size_t ocks,
                        double rate,
                        double symbols,
                        double bit_depth,
                        double energy_per_bit,
                        double detector_power,
                        struct OcuPerf *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCU_H */
