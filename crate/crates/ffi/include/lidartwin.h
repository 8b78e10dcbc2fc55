/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef LIDARTWIN_H
#define LIDARTWIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LtStatus {
  LT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LT_STATUS_ERR_NULL = 1,
  LT_STATUS_ERR_IO = 2,
  /**
   * Malformed file contents.
   */
  LT_STATUS_ERR_FORMAT = 3,
  /**
   * Invalid argument or state.
   */
  LT_STATUS_ERR_INVALID = 4,
  /**
   * A panic was caught at the boundary.
   */
  LT_STATUS_ERR_PANIC = 5,
} LtStatus;

typedef struct LtMesh LtMesh;

typedef struct LtPointCloud LtPointCloud;

typedef struct LtSensor LtSensor;

/**
 * One point as seen from C.
 */
typedef struct LtPoint {
  double x;
  double y;
  double z;
  float intensity;
  uint32_t semantic_class;
  uint32_t instance_id;
  float confidence;
} LtPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next `lt_` call on the same thread.
 */
const char *lt_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lt_version(void);

/**
 * Looks up `name` in the built-in catalog, or in the catalog file at
 * `catalog_path` when it is not null.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum LtStatus lt_sensor_load(const char *catalog_path, const char *name, struct LtSensor **out);

/**
 * # Safety
 * `sensor` must come from `lt_sensor_load` and not be used afterwards.
 */
void lt_sensor_free(struct LtSensor *sensor);

/**
 * Channel count, or 0 for a null handle.
 *
 * # Safety
 * `sensor` must be null or a live handle.
 */
size_t lt_sensor_rows(const struct LtSensor *sensor);

/**
 * Azimuth columns, or 0 for a null handle.
 *
 * # Safety
 * `sensor` must be null or a live handle.
 */
size_t lt_sensor_columns(const struct LtSensor *sensor);

/**
 * A new empty sensor-frame cloud.
 */
struct LtPointCloud *lt_cloud_new(void);

/**
 * # Safety
 * `cloud` must be null or come from this library and not be used
 * afterwards.
 */
void lt_cloud_free(struct LtPointCloud *cloud);

/**
 * Point count, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t lt_cloud_len(const struct LtPointCloud *cloud);

/**
 * Appends a point after validating it.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_cloud_push(struct LtPointCloud *cloud, const struct LtPoint *point);

/**
 * Copies point `index` into `out`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_cloud_get(const struct LtPointCloud *cloud, size_t index, struct LtPoint *out);

/**
 * Reads a KITTI `.bin` frame and, when `label_path` is not null, its
 * `.label` file.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum LtStatus lt_cloud_read_kitti(const char *point_path,
                                  const char *label_path,
                                  struct LtPointCloud **out);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_cloud_write_kitti(const struct LtPointCloud *cloud,
                                   const char *point_path,
                                   const char *label_path);

/**
 * One point per occupied cell of `sensor`, nearest wins.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_reproject(const struct LtSensor *sensor,
                           const struct LtPointCloud *cloud,
                           struct LtPointCloud **out);

/**
 * Per-cell nearest of a generated and a real frame.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_fuse(const struct LtPointCloud *generated,
                      const struct LtPointCloud *real,
                      const struct LtSensor *sensor,
                      struct LtPointCloud **out);

/**
 * Points with confidence at or above `threshold`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_filter_pseudo(const struct LtPointCloud *cloud,
                               float threshold,
                               struct LtPointCloud **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum LtStatus lt_mesh_read_ply(const char *path, struct LtMesh **out);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum LtStatus lt_mesh_write_ply(const struct LtMesh *mesh, const char *path);

/**
 * # Safety
 * `mesh` must be null or come from this library and not be used
 * afterwards.
 */
void lt_mesh_free(struct LtMesh *mesh);

/**
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t lt_mesh_vertex_count(const struct LtMesh *mesh);

/**
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t lt_mesh_triangle_count(const struct LtMesh *mesh);

/**
 * Traces `mesh` with `sensor` placed at `pose` (12 row-major numbers of the
 * 3x4 sensor-to-world matrix; identity when null).
 *
 * # Safety
 * Pointers must be null or valid; `pose` must hold 12 doubles.
 */
enum LtStatus lt_trace(const struct LtMesh *mesh,
                       const struct LtSensor *sensor,
                       const double *pose,
                       size_t supersampling,
                       struct LtPointCloud **out);

/**
 * mIoU of `n` predicted labels against ground truth. Maps are built-in
 * names (`joint`, `semantickitti`, `nuscenes`) or map files.
 *
 * # Safety
 * Label arrays must hold `n` values; strings must be NUL-terminated.
 */
enum LtStatus lt_score(const uint32_t *gt,
                       const uint32_t *pred,
                       size_t n,
                       const char *gt_map,
                       const char *pred_map,
                       double *miou);

/**
 * Runs the whole pipeline described by a config file.
 *
 * # Safety
 * `config_path` must be NUL-terminated.
 */
enum LtStatus lt_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIDARTWIN_H */
