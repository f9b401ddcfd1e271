/* alearn: active learning for binary defect classification, C interface.
 *
 * Every fallible call returns an alearn_status. On failure the message is
 * available from alearn_last_error() on the same thread until the next call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with alearn_string_free(). Handles are released with their
 * matching *_free function; passing NULL to any *_free is a no-op.
 */
#ifndef ALEARN_ALEARN_H
#define ALEARN_ALEARN_H

#include <stddef.h>
#include <stdint.h>

#if defined(ALEARN_BUILDING_LIBRARY)
#define ALEARN_API __attribute__((visibility("default")))
#else
#define ALEARN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum alearn_status {
  ALEARN_OK = 0,
  ALEARN_ERR_INVALID_ARGUMENT = 1,
  ALEARN_ERR_VALIDATION = 2,
  ALEARN_ERR_NOT_FOUND = 3,
  ALEARN_ERR_CONFLICT = 4,
  ALEARN_ERR_DATA = 5,
  ALEARN_ERR_IO = 6,
  ALEARN_ERR_CONFIGURATION = 7,
  ALEARN_ERR_TRAINING_DIVERGED = 8,
  ALEARN_ERR_INSUFFICIENT_POOL = 9,
  ALEARN_ERR_INTERNAL = 10
} alearn_status;

typedef struct alearn_dataset alearn_dataset;
typedef struct alearn_log alearn_log;
typedef struct alearn_service alearn_service;

ALEARN_API const char* alearn_version(void);
ALEARN_API const char* alearn_status_name(alearn_status status);
ALEARN_API const char* alearn_last_error(void);
ALEARN_API void alearn_string_free(char* s);

/* Datasets ---------------------------------------------------------------- */

/* params_json may be NULL for the default generator parameters. */
ALEARN_API alearn_status alearn_dataset_generate(const char* params_json, size_t n,
                                                 alearn_dataset** out);
/* Labels come from normal/ and defect/ subdirectories unless `unlabeled`.
 * file_errors_json (optional) receives a JSON array of per-file errors. */
ALEARN_API alearn_status alearn_dataset_ingest_directory(const char* path, int unlabeled,
                                                         int resize, alearn_dataset** out,
                                                         char** file_errors_json);
/* labels_csv may be NULL. */
ALEARN_API alearn_status alearn_dataset_ingest_features(const char* features_csv,
                                                        const char* labels_csv,
                                                        alearn_dataset** out);
ALEARN_API alearn_status alearn_dataset_save(const alearn_dataset* dataset, const char* dir);
ALEARN_API alearn_status alearn_dataset_load(const char* dir, alearn_dataset** out);
ALEARN_API alearn_status alearn_dataset_manifest(const alearn_dataset* dataset, char** out_json);
ALEARN_API size_t alearn_dataset_size(const alearn_dataset* dataset);
ALEARN_API void alearn_dataset_free(alearn_dataset* dataset);

/* Experiments ------------------------------------------------------------- */

/* JSON array of preset names. */
ALEARN_API alearn_status alearn_preset_names(char** out_json);
ALEARN_API alearn_status alearn_preset_config(const char* name, uint64_t seed, char** out_json);
/* Validates a config document and returns it with every field filled in. */
ALEARN_API alearn_status alearn_config_normalize(const char* config_json, char** out_json);

/* Runs a simulated-oracle experiment. When the run aborts after producing
 * rows, *out still receives the partial log alongside the error status. */
ALEARN_API alearn_status alearn_run_experiment(const char* config_json,
                                               const alearn_dataset* dataset, alearn_log** out);

ALEARN_API alearn_status alearn_log_read(const char* path, alearn_log** out);
ALEARN_API alearn_status alearn_log_parse(const char* csv, alearn_log** out);
ALEARN_API alearn_status alearn_log_csv(const alearn_log* log, char** out_csv);
/* Writes the CSV atomically (temporary file + rename). */
ALEARN_API alearn_status alearn_log_write(const alearn_log* log, const char* path);
ALEARN_API size_t alearn_log_row_count(const alearn_log* log);
ALEARN_API alearn_status alearn_log_summary(const alearn_log* log, char** out_json);
ALEARN_API void alearn_log_free(alearn_log* log);

/* Aligns two runs by cumulative queried samples. With counts == NULL every
 * shared count is used. */
ALEARN_API alearn_status alearn_compare(const alearn_log* a, const alearn_log* b,
                                        const size_t* counts, size_t n_counts, char** out_csv);

ALEARN_API alearn_status alearn_write_file_atomic(const char* path, const char* contents);

/* Annotation service ------------------------------------------------------ */

/* port 0 picks a free port; workers is the HTTP handler thread count. */
ALEARN_API alearn_status alearn_service_create(const char* host, int port, const char* data_dir,
                                               size_t workers, alearn_service** out);
/* Serves on a background thread; *port_out (optional) receives the port. */
ALEARN_API alearn_status alearn_service_start(alearn_service* service, int* port_out);
/* Serves on the calling thread until alearn_service_stop(). */
ALEARN_API alearn_status alearn_service_run(alearn_service* service);
ALEARN_API alearn_status alearn_service_stop(alearn_service* service);
ALEARN_API int alearn_service_port(const alearn_service* service);
ALEARN_API void alearn_service_free(alearn_service* service);

#ifdef __cplusplus
}
#endif

#endif /* ALEARN_ALEARN_H */
