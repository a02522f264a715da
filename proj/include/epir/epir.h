#ifndef EPIR_EPIR_H
#define EPIR_EPIR_H

#include <stddef.h>
#include <stdint.h>

#if defined(EPIR_BUILDING_LIBRARY)
#define EPIR_API __attribute__((visibility("default")))
#else
#define EPIR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum epir_status {
  EPIR_OK = 0,
  EPIR_ERR_CONFIG = 1,
  EPIR_ERR_RUNTIME = 2,
  EPIR_ERR_ARGUMENT = 3
} epir_status;

typedef struct epir_config epir_config;
typedef struct epir_manifest epir_manifest;

/* Message for the last failing call on this thread; never NULL. */
EPIR_API const char* epir_last_error(void);
EPIR_API const char* epir_version(void);

EPIR_API epir_status epir_config_new(epir_config** out);
EPIR_API epir_status epir_config_load(const char* path, epir_config** out);
EPIR_API epir_status epir_config_set(epir_config* config, const char* key, const char* value);
/* Writes the current value of `key`, NUL-terminated, truncating to `size`. */
EPIR_API epir_status epir_config_get(const epir_config* config, const char* key, char* buffer, size_t size);
/* 16 hex digits plus NUL: `size` must be at least 17. */
EPIR_API epir_status epir_config_hash(const epir_config* config, char* buffer, size_t size);
EPIR_API void epir_config_free(epir_config* config);

/* The config's label map is applied when one is set. */
EPIR_API epir_status epir_manifest_load(const char* path, const epir_config* config, epir_manifest** out);
EPIR_API size_t epir_manifest_size(const epir_manifest* manifest);
EPIR_API size_t epir_manifest_num_classes(const epir_manifest* manifest);
EPIR_API size_t epir_manifest_num_subjects(const epir_manifest* manifest);
EPIR_API void epir_manifest_free(epir_manifest* manifest);

typedef struct epir_synth_options {
  int classes;
  int subjects;
  int samples_per_subject;
  int image_size;
  uint64_t seed;
} epir_synth_options;

EPIR_API void epir_synth_defaults(epir_synth_options* options);
/* Writes frames and manifest.csv under out_dir. */
EPIR_API epir_status epir_synth(const epir_synth_options* options, const char* out_dir);

typedef struct epir_cache_summary {
  size_t written;
  size_t skipped;
  size_t failed;
} epir_cache_summary;

EPIR_API epir_status epir_cache(const epir_manifest* manifest, const epir_config* config, const char* cache_dir,
                                epir_cache_summary* summary);

typedef struct epir_metrics {
  double uf1;
  double uar;
  size_t samples;
  size_t folds;
} epir_metrics;

typedef void (*epir_log_fn)(const char* message, void* user);

EPIR_API epir_status epir_train(const char* manifest_path, const epir_config* config, const char* run_dir,
                                const char* cache_dir, epir_log_fn log, void* user, epir_metrics* metrics);
EPIR_API epir_status epir_eval(const char* run_dir, epir_metrics* metrics);

/* axis: "num_blocks" or "integration_rate". */
EPIR_API epir_status epir_sweep(const char* manifest_path, const epir_config* config, const char* axis,
                                const double* values, size_t count, const char* cache_dir, const char* csv_path,
                                epir_log_fn log, void* user);

typedef struct epir_cost {
  uint64_t params;
  uint64_t flops;
  uint64_t attention_flops;
  uint64_t instrumented_flops;
} epir_cost;

/* json_path may be NULL. */
EPIR_API epir_status epir_cost_report(const epir_config* config, int num_classes, const char* json_path,
                                      epir_cost* cost);

/* run_dir may be NULL. */
EPIR_API epir_status epir_visualize(const char* manifest_path, const epir_config* config, const char* cache_dir,
                                    const char* sample_id, const char* run_dir, const char* out_json);

#ifdef __cplusplus
}
#endif

#endif
