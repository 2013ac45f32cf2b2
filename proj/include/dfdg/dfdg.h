#ifndef DFDG_DFDG_H
#define DFDG_DFDG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(DFDG_BUILDING_LIBRARY)
#define DFDG_API __declspec(dllexport)
#else
#define DFDG_API __declspec(dllimport)
#endif
#else
#define DFDG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dfdg_status {
  DFDG_OK = 0,
  DFDG_ERR_INVALID_ARG = 1,
  DFDG_ERR_CONFIG = 2,
  DFDG_ERR_IO = 3,
  DFDG_ERR_NUMERIC = 4,
  DFDG_ERR_INTERNAL = 5,
  /* The call finished but at least one seed failed; the result is valid. */
  DFDG_ERR_PARTIAL = 6
} dfdg_status;

typedef struct dfdg_config dfdg_config;
typedef struct dfdg_result dfdg_result;

typedef void (*dfdg_log_fn)(const char* line, void* user);

DFDG_API const char* dfdg_version(void);

/* Message of the last failed call on this thread ("" if none). */
DFDG_API const char* dfdg_last_error(void);

/* Installs a progress callback for long-running calls; NULL removes it. */
DFDG_API void dfdg_set_log_callback(dfdg_log_fn fn, void* user);

/* Strings returned through char** out-parameters are owned by the caller. */
DFDG_API void dfdg_string_free(char* s);

DFDG_API dfdg_status dfdg_config_new(dfdg_config** out);
DFDG_API dfdg_status dfdg_config_desk_profile(dfdg_config** out);
DFDG_API dfdg_status dfdg_config_load(const char* path, dfdg_config** out);
DFDG_API dfdg_status dfdg_config_parse(const char* text, dfdg_config** out);
DFDG_API dfdg_status dfdg_config_save(const dfdg_config* cfg, const char* path);
DFDG_API dfdg_status dfdg_config_serialize(const dfdg_config* cfg, char** out_text);
DFDG_API dfdg_status dfdg_config_validate(const dfdg_config* cfg);
DFDG_API dfdg_status dfdg_config_set(dfdg_config* cfg, const char* key, const char* value);
DFDG_API dfdg_status dfdg_config_get(const dfdg_config* cfg, const char* key, char** out_value);
DFDG_API size_t dfdg_config_key_count(void);
/* Dotted key name, e.g. "server.outer_iters"; NULL when out of range. */
DFDG_API const char* dfdg_config_key(size_t index);
DFDG_API void dfdg_config_free(dfdg_config* cfg);

DFDG_API dfdg_status dfdg_export_partition(const dfdg_config* cfg, uint64_t seed, char** out_path);
DFDG_API dfdg_status dfdg_train_clients(const dfdg_config* cfg);

DFDG_API dfdg_status dfdg_run(const dfdg_config* cfg, dfdg_result** out);
DFDG_API dfdg_status dfdg_compare(const dfdg_config* cfg, const char* const* modes, size_t num_modes,
                                  dfdg_result** out);
DFDG_API dfdg_status dfdg_ablate(const dfdg_config* cfg, const char* knob, dfdg_result** out);
DFDG_API dfdg_status dfdg_sweep(const dfdg_config* cfg, const char* key, const char* const* values,
                                size_t num_values, dfdg_result** out);

DFDG_API size_t dfdg_result_row_count(const dfdg_result* result);
/* stddev is NaN when fewer than two seeds completed. Any out-pointer may be NULL. */
DFDG_API dfdg_status dfdg_result_row(const dfdg_result* result, size_t index, const char** label, double* mean,
                                     double* stddev, int* completed, int* failed);
DFDG_API size_t dfdg_result_record_count(const dfdg_result* result);
DFDG_API dfdg_status dfdg_result_record(const dfdg_result* result, size_t index, const char** label,
                                        uint64_t* seed, int* ok, double* top_accuracy, const char** dir);
DFDG_API dfdg_status dfdg_result_markdown(const dfdg_result* result, char** out_text);
DFDG_API dfdg_status dfdg_result_json(const dfdg_result* result, char** out_text);
DFDG_API void dfdg_result_free(dfdg_result* result);

/* Reads every run record below runs_dir and writes curves and grids to
   out_dir. Warnings (one per line) go to *out_warnings when non-NULL. */
DFDG_API dfdg_status dfdg_plot(const char* runs_dir, const char* out_dir, char** out_warnings);

#ifdef __cplusplus
}
#endif

#endif
