#ifndef LOCBENCH_H
#define LOCBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LbStatus {
  LB_STATUS_OK = 0,
  LB_STATUS_NULL_ARGUMENT = 1,
  LB_STATUS_INVALID_ARGUMENT = 2,
  LB_STATUS_IO = 3,
  LB_STATUS_PARSE = 4,
  LB_STATUS_INTEGRITY = 5,
  LB_STATUS_NOT_FOUND = 6,
  LB_STATUS_BUFFER_TOO_SMALL = 7,
  LB_STATUS_FAILED = 8,
  LB_STATUS_PANIC = 9,
} LbStatus;

/**
 * A loaded dataset directory.
 */
typedef struct LbDataset LbDataset;

/**
 * Per-query ordered database images.
 */
typedef struct LbRanking LbRanking;

/**
 * Results of a full benchmark run.
 */
typedef struct LbRun LbRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *lb_version(void);

/**
 * Size in bytes (including the nul) of the calling thread's last error
 * message, or 0 when the last call succeeded.
 */
size_t lb_last_error_length(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum LbStatus lb_last_error_message(char *buf, size_t len);

/**
 * Loads and validates the dataset stored under `path`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum LbStatus lb_dataset_load(const char *path, struct LbDataset **out);

/**
 * Writes a synthetic dataset to `path` and returns it loaded.
 * `harness_json` may be null for the default harness.
 *
 * # Safety
 * String arguments must be nul-terminated; `out` must be valid.
 */
enum LbStatus lb_dataset_write_synthetic(const char *harness_json,
                                         const char *path,
                                         struct LbDataset **out);

/**
 * # Safety
 * `ds` must come from this library and not be used afterwards; null is ignored.
 */
void lb_dataset_free(struct LbDataset *ds);

/**
 * Number of database and query images.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LbStatus lb_dataset_counts(const struct LbDataset *ds, size_t *n_database, size_t *n_query);

/**
 * Ranks database images for every query. `method` is `rcp`, `frustum`,
 * `coobs` or `desc:<feature>`.
 *
 * # Safety
 * `ds` must be valid, `method` nul-terminated and `out` valid.
 */
enum LbStatus lb_rank(const struct LbDataset *ds, const char *method, struct LbRanking **out);

/**
 * # Safety
 * `r` must come from this library and not be used afterwards; null is ignored.
 */
void lb_ranking_free(struct LbRanking *r);

/**
 * Writes up to `k` database ids for `query` into `ids` (capacity `k`);
 * `count` receives how many were written.
 *
 * # Safety
 * `ids` must point to `k` writable `uint32_t`.
 */
enum LbStatus lb_ranking_top_k(const struct LbRanking *r,
                               uint32_t query,
                               size_t k,
                               uint32_t *ids,
                               size_t *count);

/**
 * Writes the ranking as text (`query_id db_id score rank` per line).
 *
 * # Safety
 * `r` must be valid and `path` nul-terminated.
 */
enum LbStatus lb_ranking_write(const struct LbRanking *r, const char *path);

/**
 * Position error in meters and rotation error in degrees between two poses,
 * each given as a camera centre and a world-to-camera quaternion `(w, x, y, z)`.
 *
 * # Safety
 * Array pointers must reference 3 and 4 doubles; outputs must be valid.
 */
enum LbStatus lb_pose_error(const double (*center_est)[3],
                            const double (*wxyz_est)[4],
                            const double (*center_ref)[3],
                            const double (*wxyz_ref)[4],
                            double *meters,
                            double *degrees);

/**
 * Blur score (mean absolute high-frequency residual) of a row-major
 * grayscale image.
 *
 * # Safety
 * `pixels` must reference `width * height` doubles.
 */
enum LbStatus lb_blur_score(const double *pixels,
                            size_t width,
                            size_t height,
                            size_t cutoff,
                            double *score);

/**
 * Runs the full benchmark and writes the reports to `out_dir`.
 *
 * With a null `data_dir` a synthetic dataset is generated into
 * `out_dir/dataset` from `harness_json` (null for the default). Null
 * `config_json` selects the default benchmark configuration. Cells that
 * failed are reported by [`lb_run_failed_cells`], not by the status.
 *
 * # Safety
 * String arguments must be nul-terminated or null where allowed.
 */
enum LbStatus lb_run(const char *data_dir,
                     const char *config_json,
                     const char *harness_json,
                     const char *out_dir,
                     struct LbRun **out);

/**
 * # Safety
 * `run` must come from this library and not be used afterwards; null is ignored.
 */
void lb_run_free(struct LbRun *run);

/**
 * SHA-256 of the run manifest as 64 hex digits; `needed` (nullable)
 * receives the buffer size required.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum LbStatus lb_run_manifest_hash(const struct LbRun *run, char *buf, size_t len, size_t *needed);

/**
 * Number of (ranking source, method) cells that failed as a whole.
 *
 * # Safety
 * Pointers must be valid.
 */
enum LbStatus lb_run_failed_cells(const struct LbRun *run, size_t *count);

/**
 * Percentage of queries localized within `meters` and `degrees` for one
 * ranking source, method (`approx-ewb`, `local-sfm`, `global`, ...) and k.
 *
 * # Safety
 * Pointers must be valid and strings nul-terminated.
 */
enum LbStatus lb_run_localized(const struct LbRun *run,
                               const char *source,
                               const char *method,
                               size_t k,
                               double meters,
                               double degrees,
                               double *percent);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOCBENCH_H */
