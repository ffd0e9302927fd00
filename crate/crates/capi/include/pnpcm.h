#ifndef PNPCM_H
#define PNPCM_H

/* Generated by cbindgen from pnpcm-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible entry points.
 */
typedef enum PnpStatus {
  PNP_STATUS_OK = 0,
  PNP_STATUS_NULL_ARGUMENT = 1,
  PNP_STATUS_INVALID_ARGUMENT = 2,
  PNP_STATUS_SHAPE_MISMATCH = 3,
  PNP_STATUS_NUMERICAL_ERROR = 4,
  PNP_STATUS_IO_ERROR = 5,
  PNP_STATUS_PROTOCOL_ERROR = 6,
  PNP_STATUS_CONFIG_ERROR = 7,
  PNP_STATUS_BUFFER_TOO_SMALL = 8,
} PnpStatus;

/**
 * Opaque tensor handle.
 */
typedef struct PnpTensor PnpTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *pnp_version(void);

/**
 * The last error message on this thread, or NULL if none was recorded.
 * The caller owns the returned string and must free it with
 * `pnp_string_free`.
 */
char *pnp_last_error_message(void);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by a pnpcm function and not freed before.
 */
void pnp_string_free(char *s);

/**
 * New real tensor from a row-major buffer of `prod(dims)` doubles.
 *
 * # Safety
 * `dims` points to `ndim` u64s; `data` points to `prod(dims)` doubles.
 */
struct PnpTensor *pnp_tensor_new_real(const uint64_t *dims, size_t ndim, const double *data);

/**
 * New complex tensor from `2·prod(dims)` doubles, interleaved (re, im).
 *
 * # Safety
 * `dims` points to `ndim` u64s; `data` points to `2·prod(dims)` doubles.
 */
struct PnpTensor *pnp_tensor_new_complex(const uint64_t *dims, size_t ndim, const double *data);

/**
 * Free a tensor handle.
 *
 * # Safety
 * `t` must come from this library and not be freed twice.
 */
void pnp_tensor_free(struct PnpTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
size_t pnp_tensor_ndim(const struct PnpTensor *t);

/**
 * Number of elements (a complex element counts once).
 *
 * # Safety
 * `t` must be a live tensor handle.
 */
size_t pnp_tensor_len(const struct PnpTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
bool pnp_tensor_is_complex(const struct PnpTensor *t);

/**
 * Copy the dimension sizes into `out` (capacity `cap`).
 *
 * # Safety
 * `t` live handle; `out` points to at least `cap` u64s.
 */
enum PnpStatus pnp_tensor_dims(const struct PnpTensor *t, uint64_t *out, size_t cap);

/**
 * Copy the scalar payload into `out`: `len` doubles for real tensors,
 * `2·len` interleaved doubles for complex ones.
 *
 * # Safety
 * `t` live handle; `out` points to at least `cap` doubles.
 */
enum PnpStatus pnp_tensor_copy_data(const struct PnpTensor *t, double *out, size_t cap);

/**
 * Load a .pnpt tensor file.
 *
 * # Safety
 * `path` is a nul-terminated UTF-8 string.
 */
struct PnpTensor *pnp_tensor_load(const char *path);

/**
 * Save a tensor as a .pnpt file.
 *
 * # Safety
 * `path` is a nul-terminated UTF-8 string; `t` is a live handle.
 */
enum PnpStatus pnp_tensor_save(const char *path, const struct PnpTensor *t);

/**
 * Elementwise modulus of a complex tensor (new real handle).
 *
 * # Safety
 * `t` is a live handle.
 */
struct PnpTensor *pnp_tensor_magnitude(const struct PnpTensor *t);

/**
 * PSNR in dB between two real tensors at the given peak.
 *
 * # Safety
 * `x`, `reference` live handles; `out` a valid double pointer.
 */
enum PnpStatus pnp_psnr(const struct PnpTensor *x,
                        const struct PnpTensor *reference,
                        double peak,
                        double *out);

/**
 * Windowed SSIM between two real tensors; the standard 11×11 window is
 * shrunk to fit small images.
 *
 * # Safety
 * `x`, `reference` live handles; `out` a valid double pointer.
 */
enum PnpStatus pnp_ssim(const struct PnpTensor *x,
                        const struct PnpTensor *reference,
                        double peak,
                        double *out);

/**
 * Run a reconstruction described by a config file and return the estimate
 * as a new tensor handle. `seed` overrides the config seed when
 * `has_seed` is true.
 *
 * # Safety
 * `config_path` is a nul-terminated UTF-8 string.
 */
struct PnpTensor *pnp_reconstruct(const char *config_path, bool has_seed, uint64_t seed);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PNPCM_H */
