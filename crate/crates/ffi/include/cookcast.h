#ifndef COOKCAST_H
#define COOKCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum CookcastStatus {
  COOKCAST_STATUS_OK = 0,
  COOKCAST_STATUS_NULL_POINTER = 1,
  COOKCAST_STATUS_INVALID_ARGUMENT = 2,
  COOKCAST_STATUS_FORMAT = 3,
  COOKCAST_STATUS_LOOKUP = 4,
  COOKCAST_STATUS_SHAPE = 5,
  COOKCAST_STATUS_NUMERIC = 6,
  COOKCAST_STATUS_STATE = 7,
  COOKCAST_STATUS_CONFIG = 8,
  COOKCAST_STATUS_IO = 9,
  COOKCAST_STATUS_INTERNAL = 10,
  COOKCAST_STATUS_PANIC = 11,
} CookcastStatus;

// Trained similarity network.
typedef struct CookcastCis CookcastCis;

// Trained cooked-state generator.
typedef struct CookcastGenerator CookcastGenerator;

// Streaming stop detector bound to one target image.
typedef struct CookcastMonitor CookcastMonitor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *cookcast_last_error(void);

// Library version, including the git revision it was built from.
const char *cookcast_version(void);

// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum CookcastStatus cookcast_cis_load(const char *dir, struct CookcastCis **out);

// # Safety
// `handle` must come from [`cookcast_cis_load`] and not be freed twice.
void cookcast_cis_free(struct CookcastCis *handle);

// Input image side length the network expects.
//
// # Safety
// `handle` must be a live CIS handle; `out` must be writable.
enum CookcastStatus cookcast_cis_image_size(const struct CookcastCis *handle, size_t *out);

// Clamped culinary similarity in `[0, 1]` of two same-session images.
//
// # Safety
// `a` and `b` must each point to `height·width·3` floats.
enum CookcastStatus cookcast_cis_similarity(const struct CookcastCis *handle,
                                            const float *a,
                                            const float *b,
                                            size_t height,
                                            size_t width,
                                            double *out);

// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum CookcastStatus cookcast_generator_load(const char *dir, struct CookcastGenerator **out);

// # Safety
// `handle` must come from [`cookcast_generator_load`] and not be freed twice.
void cookcast_generator_free(struct CookcastGenerator *handle);

// # Safety
// `handle` must be a live generator handle; `out` must be writable.
enum CookcastStatus cookcast_generator_image_size(const struct CookcastGenerator *handle,
                                                  size_t *out);

// Writes the `state` image of `recipe` for a square raw image of the
// generator's size into `out` (`out_len` must equal `size·size·3`).
//
// # Safety
// `raw` must point to `size·size·3` floats and `out` to `out_len` floats.
enum CookcastStatus cookcast_generator_generate(const struct CookcastGenerator *handle,
                                                const float *raw,
                                                size_t size,
                                                const char *recipe,
                                                const char *state,
                                                float *out,
                                                size_t out_len);

// Starts monitoring against `target`. The monitor keeps its own reference
// to the network, so `cis` may be freed afterwards.
//
// # Safety
// `target` must point to `height·width·3` floats; `out` must be writable.
enum CookcastStatus cookcast_monitor_start(const struct CookcastCis *cis,
                                           const float *target,
                                           size_t height,
                                           size_t width,
                                           size_t smooth_window,
                                           size_t peak_confirm,
                                           double min_peak_sim,
                                           struct CookcastMonitor **out);

// Feeds the next frame. On a stop decision `*stopped` is set to 1 and
// `*stop_index` to the peak frame; otherwise `*stopped` is 0.
//
// # Safety
// `frame` must point to `height·width·3` floats; outputs must be writable.
enum CookcastStatus cookcast_monitor_step(struct CookcastMonitor *handle,
                                          const float *frame,
                                          size_t height,
                                          size_t width,
                                          double t_seconds,
                                          int32_t *stopped,
                                          size_t *stop_index);

// # Safety
// `handle` must come from [`cookcast_monitor_start`] and not be freed twice.
void cookcast_monitor_free(struct CookcastMonitor *handle);

// Re-encodes the archive in `in_dir` with the default hybrid policy into
// `out_dir`; `*reduction` receives bytes-before / bytes-after.
//
// # Safety
// Both paths must be NUL-terminated strings; `reduction` must be writable.
enum CookcastStatus cookcast_quantize_archive(const char *in_dir,
                                              const char *out_dir,
                                              double *reduction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOKCAST_H */
