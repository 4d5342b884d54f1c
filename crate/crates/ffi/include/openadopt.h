#ifndef OPENADOPT_H
#define OPENADOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OaStatus {
  OA_STATUS_OK = 0,
  OA_STATUS_NULL_POINTER = 1,
  OA_STATUS_INVALID_UTF8 = 2,
  OA_STATUS_INVALID_ARGUMENT = 3,
  OA_STATUS_REGISTRY = 4,
  OA_STATUS_SERIES = 5,
  OA_STATUS_RAM = 6,
  OA_STATUS_BENCHMARKS = 7,
  OA_STATUS_NOT_FOUND = 8,
  OA_STATUS_PANIC = 9,
} OaStatus;

typedef enum OaSizeBucket {
  OA_SIZE_BUCKET_SUB1_B = 0,
  OA_SIZE_BUCKET_B1_TO5 = 1,
  OA_SIZE_BUCKET_B7_TO9 = 2,
  OA_SIZE_BUCKET_B10_TO50 = 3,
  OA_SIZE_BUCKET_B50_TO100 = 4,
  OA_SIZE_BUCKET_B100_TO250 = 5,
  OA_SIZE_BUCKET_B250_PLUS = 6,
} OaSizeBucket;

/**
 * Opaque RAM reference curve.
 */
typedef struct OaCurve OaCurve;

/**
 * Opaque model registry.
 */
typedef struct OaRegistry OaRegistry;

/**
 * Opaque cumulative download series.
 */
typedef struct OaSeries OaSeries;

typedef struct OaDate {
  int32_t year;
  uint32_t month;
  uint32_t day;
} OaDate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *oa_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator.
 */
size_t oa_last_error_message(char *buf, size_t len);

/**
 * Parses registry CSV text with the bundled alias table.
 */
enum OaStatus oa_registry_from_csv(const char *csv, struct OaRegistry **out);

void oa_registry_free(struct OaRegistry *reg);

enum OaStatus oa_registry_len(const struct OaRegistry *reg, size_t *out);

/**
 * Size bucket of a registered model.
 */
enum OaStatus oa_registry_bucket(const struct OaRegistry *reg,
                                 const char *model_id,
                                 enum OaSizeBucket *out);

/**
 * Region of any hub id: 0 USA, 1 China, 2 Europe, 3 Other.
 */
enum OaStatus oa_registry_region(const struct OaRegistry *reg, const char *model_id, uint32_t *out);

enum OaStatus oa_classify_size_bucket(int64_t total_params, enum OaSizeBucket *out);

/**
 * Creates an empty series for `model_id` (must be `org/name`).
 */
enum OaStatus oa_series_new(const char *model_id, struct OaSeries **out);

void oa_series_free(struct OaSeries *s);

/**
 * Appends a point; dates must be strictly increasing.
 */
enum OaStatus oa_series_push(struct OaSeries *s, struct OaDate date, double cumulative);

enum OaStatus oa_series_len(const struct OaSeries *s, size_t *out);

/**
 * Value of point `index`.
 */
enum OaStatus oa_series_value(const struct OaSeries *s, size_t index, double *out);

/**
 * IQR spike filter with multiplier `k`. Writes a new series handle and the
 * number of flagged deltas.
 */
enum OaStatus oa_iqr_filter(const struct OaSeries *s,
                            double k,
                            struct OaSeries **out,
                            size_t *flagged);

/**
 * Downloads `t` days after `release`. `*present` is false when the
 * milestone lies beyond the series.
 */
enum OaStatus oa_milestone_value(const struct OaSeries *s,
                                 struct OaDate release,
                                 uint32_t t,
                                 double *out,
                                 bool *present);

enum OaStatus oa_ram_score(double downloads, double median, double *out);

enum OaStatus oa_curve_from_json(const char *json, struct OaCurve **out);

void oa_curve_free(struct OaCurve *c);

/**
 * Reference median at milestone `t`.
 */
enum OaStatus oa_curve_median(const struct OaCurve *c, uint32_t t, double *out);

/**
 * RAM score of `downloads` at milestone `t` against the curve.
 */
enum OaStatus oa_curve_score(const struct OaCurve *c, uint32_t t, double downloads, double *out);

/**
 * Arena rating after the recalibration shift for a rating observed on `date`.
 */
enum OaStatus oa_adjust_elo(struct OaDate date, double elo, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPENADOPT_H */
