#ifndef BEAS_H
#define BEAS_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BeasStatus {
  BEAS_STATUS_OK = 0,
  BEAS_STATUS_NULL_POINTER = 1,
  BEAS_STATUS_INVALID_ARGUMENT = 2,
  BEAS_STATUS_IO = 3,
  BEAS_STATUS_EMPTY_MASK = 4,
  BEAS_STATUS_UNKNOWN_POINT = 5,
  BEAS_STATUS_EMPTY_HISTORY = 6,
  BEAS_STATUS_NON_FINITE = 7,
  BEAS_STATUS_DIVERGED = 8,
  BEAS_STATUS_PANIC = 9,
} BeasStatus;

typedef enum BeasVolumeKind {
  BEAS_VOLUME_KIND_IMAGE = 0,
  BEAS_VOLUME_KIND_PROBABILITY = 1,
  BEAS_VOLUME_KIND_MASK = 2,
} BeasVolumeKind;

typedef enum BeasUnits {
  BEAS_UNITS_VOXEL = 0,
  BEAS_UNITS_MILLIMETRE = 1,
} BeasUnits;

/**
 * Opaque interactive segmentation session.
 */
typedef struct BeasSession BeasSession;

/**
 * Opaque voxel volume.
 */
typedef struct BeasVolume BeasVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread; empty if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *beas_last_error_message(void);

/**
 * Loads a volume from a JSON header path (the `.json` suffix is optional).
 */
enum BeasStatus beas_volume_load(const char *path, struct BeasVolume **out);

/**
 * Writes `<path>.json` and `<path>.raw`.
 */
enum BeasStatus beas_volume_save(const struct BeasVolume *volume, const char *path);

/**
 * Copies `len` x-fastest samples into a new volume.
 */
enum BeasStatus beas_volume_create(const size_t *dims,
                                   const double *spacing_mm,
                                   enum BeasVolumeKind kind,
                                   const float *data,
                                   size_t len,
                                   struct BeasVolume **out);

enum BeasStatus beas_volume_dims(const struct BeasVolume *volume, size_t *dims_out);

enum BeasStatus beas_volume_kind(const struct BeasVolume *volume, enum BeasVolumeKind *kind_out);

/**
 * Borrowed view of the samples; valid while the volume lives.
 */
enum BeasStatus beas_volume_data(const struct BeasVolume *volume,
                                 const float **data_out,
                                 size_t *len_out);

void beas_volume_free(struct BeasVolume *volume);

/**
 * Generates a phantom from a JSON spec (null for defaults). Any output pointer may be
 * null to discard that volume.
 */
enum BeasStatus beas_phantom_generate(const char *spec_json,
                                      struct BeasVolume **image_out,
                                      struct BeasVolume **prob_out,
                                      struct BeasVolume **truth_out);

/**
 * Creates a session and runs the initial fit. `image` may be null; `config_json` may
 * be null for the interactive defaults. A mask given as `prob` is used as a 0/1 map.
 */
enum BeasStatus beas_session_create(const struct BeasVolume *image,
                                    const struct BeasVolume *prob,
                                    size_t n_theta,
                                    size_t n_phi,
                                    uint32_t scale,
                                    const char *config_json,
                                    struct BeasSession **out);

/**
 * Adds a point (world mm) and re-evolves; writes the new point id.
 */
enum BeasStatus beas_session_add_point(struct BeasSession *session,
                                       double x_mm,
                                       double y_mm,
                                       double z_mm,
                                       uint64_t *id_out);

enum BeasStatus beas_session_remove_point(struct BeasSession *session, uint64_t id);

enum BeasStatus beas_session_undo(struct BeasSession *session);

enum BeasStatus beas_session_point_count(const struct BeasSession *session, size_t *count_out);

/**
 * Surface radius (mm) at azimuth `theta` and zenith `phi` (radians).
 */
enum BeasStatus beas_session_evaluate(const struct BeasSession *session,
                                      double theta,
                                      double phi,
                                      double *rho_out);

/**
 * Rasterizes the surface on the probability grid into a new mask volume.
 */
enum BeasStatus beas_session_mask(const struct BeasSession *session, struct BeasVolume **out);

/**
 * Writes `<prefix>_mask.json/.raw`, `<prefix>.obj` and `<prefix>_surface.json`.
 */
enum BeasStatus beas_session_export(const struct BeasSession *session, const char *prefix);

void beas_session_free(struct BeasSession *session);

enum BeasStatus beas_dice(const struct BeasVolume *a, const struct BeasVolume *b, double *out);

/**
 * Symmetric Hausdorff distance between mask boundaries.
 */
enum BeasStatus beas_hausdorff(const struct BeasVolume *a,
                               const struct BeasVolume *b,
                               enum BeasUnits units,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAS_H */
