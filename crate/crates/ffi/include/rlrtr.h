#ifndef RLRTR_H
#define RLRTR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RlrtrStatus {
  RLRTR_STATUS_OK = 0,
  RLRTR_STATUS_NULL_POINTER = 1,
  RLRTR_STATUS_ARGUMENT = 2,
  RLRTR_STATUS_NUMERIC = 3,
  RLRTR_STATUS_IO = 4,
  RLRTR_STATUS_FORMAT = 5,
  RLRTR_STATUS_CONFIG = 6,
  RLRTR_STATUS_BUFFER_TOO_SMALL = 7,
  RLRTR_STATUS_PANIC = 8,
} RlrtrStatus;

// Solver settings.
typedef struct RlrtrConfig RlrtrConfig;

// Output of one decomposition.
typedef struct RlrtrResult RlrtrResult;

// A single-channel video, `height × width × frames` 32-bit floats.
typedef struct RlrtrVideo RlrtrVideo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
size_t rlrtr_last_error(char *buf, size_t len);

// Creates a video from `height·width·frames` floats in frame-major,
// row-major order.
enum RlrtrStatus rlrtr_video_new(size_t height,
                                 size_t width,
                                 size_t frames,
                                 const float *data,
                                 struct RlrtrVideo **out);

enum RlrtrStatus rlrtr_video_read_rlrt(const char *path, struct RlrtrVideo **out);

enum RlrtrStatus rlrtr_video_write_rlrt(const struct RlrtrVideo *video, const char *path);

// Writes the dimensions; any output pointer may be null.
enum RlrtrStatus rlrtr_video_dims(const struct RlrtrVideo *video,
                                  size_t *height,
                                  size_t *width,
                                  size_t *frames);

// Copies the samples into `buf`, which must hold `height·width·frames` floats.
enum RlrtrStatus rlrtr_video_copy_data(const struct RlrtrVideo *video, float *buf, size_t len);

void rlrtr_video_free(struct RlrtrVideo *video);

// Default solver settings.
enum RlrtrStatus rlrtr_config_new(struct RlrtrConfig **out);

// Solver settings from TOML text (the `[solver]` section; `[synth]` is
// validated and ignored).
enum RlrtrStatus rlrtr_config_from_toml(const char *text, struct RlrtrConfig **out);

enum RlrtrStatus rlrtr_config_load(const char *path, struct RlrtrConfig **out);

// Toggles the alignment and subspace parts of the model.
enum RlrtrStatus rlrtr_config_set_features(struct RlrtrConfig *cfg,
                                           bool enable_affine,
                                           bool enable_subspace);

void rlrtr_config_free(struct RlrtrConfig *cfg);

// Decomposes `video`. Stopping at the iteration limit is not an error; see
// [`rlrtr_result_converged`].
enum RlrtrStatus rlrtr_derain(const struct RlrtrVideo *video,
                              const struct RlrtrConfig *cfg,
                              struct RlrtrResult **out);

// New handle holding the background layer.
enum RlrtrStatus rlrtr_result_background(const struct RlrtrResult *res, struct RlrtrVideo **out);

// New handle holding the rain layer (aligned input minus background).
enum RlrtrStatus rlrtr_result_rain(const struct RlrtrResult *res, struct RlrtrVideo **out);

// Outer iterations run; 0 for a null handle.
size_t rlrtr_result_iterations(const struct RlrtrResult *res);

bool rlrtr_result_converged(const struct RlrtrResult *res);

// Objective after each outer iteration, copied into `buf`.
enum RlrtrStatus rlrtr_result_objective_history(const struct RlrtrResult *res,
                                                double *buf,
                                                size_t len);

// Per-frame affine parameters `(a, b, tx, c, d, ty)`; `buf` holds `6·frames` values.
enum RlrtrStatus rlrtr_result_tau(const struct RlrtrResult *res, double *buf, size_t len);

void rlrtr_result_free(struct RlrtrResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLRTR_H */
