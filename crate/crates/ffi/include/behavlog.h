#ifndef BEHAVLOG_H
#define BEHAVLOG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BlStatus {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_ARGUMENT = 1,
  BL_STATUS_INVALID_UTF8 = 2,
  BL_STATUS_IO = 3,
  BL_STATUS_PARSE = 4,
  BL_STATUS_NOT_FOUND = 5,
  BL_STATUS_TYPE_MISMATCH = 6,
  BL_STATUS_INVALID_ARGUMENT = 7,
  BL_STATUS_INTERNAL = 8,
} BlStatus;

typedef struct BlCatalog BlCatalog;

typedef struct BlConfig BlConfig;

typedef struct BlLog BlLog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *bl_last_error(void);

// Releases a string returned by this library.
void bl_string_free(char *s);

// Loads a catalog JSON file.
enum BlStatus bl_catalog_load(const char *path, struct BlCatalog **out);

void bl_catalog_free(struct BlCatalog *c);

enum BlStatus bl_catalog_filter_count(const struct BlCatalog *c, uint64_t *out);

// Loads a storage config JSON file.
enum BlStatus bl_config_load(const char *path, struct BlConfig **out);

// The fixed-width baseline layout for a catalog.
enum BlStatus bl_config_baseline(const struct BlCatalog *catalog, struct BlConfig **out);

void bl_config_free(struct BlConfig *c);

// Loads a log directory of shard files.
enum BlStatus bl_log_load(const char *dir, struct BlLog **out);

void bl_log_free(struct BlLog *l);

enum BlStatus bl_log_total_bytes(const struct BlLog *log, uint64_t *out);

enum BlStatus bl_log_row_count(const struct BlLog *log, uint64_t *out);

// Evaluates a feature at `now_ms`; the value is written as JSON to `out`,
// to be released with `bl_string_free`.
enum BlStatus bl_feature_evaluate(const struct BlCatalog *catalog,
                                  const struct BlConfig *config,
                                  const struct BlLog *log,
                                  uint32_t feature,
                                  int64_t now_ms,
                                  char **out);

// Maximum-weight matching on an undirected graph with `n` vertices and `m`
// edges `(us[i], vs[i], ws[i])`. `mates` receives `n` entries: the partner of
// each vertex or -1. `weight` receives the matching's total weight.
enum BlStatus bl_max_weight_matching(uintptr_t n,
                                     const uint32_t *us,
                                     const uint32_t *vs,
                                     const int64_t *ws,
                                     uintptr_t m,
                                     int64_t *mates,
                                     int64_t *weight);

// Generates the calibrated workload for `seed`, simulates `days` nights of
// ingest and optimization, and writes a JSON summary to `out`.
enum BlStatus bl_simulate(uint64_t seed, uint32_t days, double drift_rate, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEHAVLOG_H */
