#include "alearn/alearn.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "fsutil.hpp"
#include "service.hpp"

#ifndef ALEARN_VERSION_STRING
#define ALEARN_VERSION_STRING "0.0.0"
#endif

struct alearn_dataset {
  alearn::data::Dataset dataset;
};

struct alearn_log {
  alearn::engine::MetricsLog log;
};

struct alearn_service {
  std::unique_ptr<alearn::service::Service> service;
};

namespace {

using alearn::Error;
using alearn::ErrorCode;
using nlohmann::json;

thread_local std::string g_last_error;

alearn_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return ALEARN_ERR_INVALID_ARGUMENT;
    case ErrorCode::Validation: return ALEARN_ERR_VALIDATION;
    case ErrorCode::NotFound: return ALEARN_ERR_NOT_FOUND;
    case ErrorCode::Conflict: return ALEARN_ERR_CONFLICT;
    case ErrorCode::Data: return ALEARN_ERR_DATA;
    case ErrorCode::Io: return ALEARN_ERR_IO;
    case ErrorCode::Configuration: return ALEARN_ERR_CONFIGURATION;
    case ErrorCode::TrainingDiverged: return ALEARN_ERR_TRAINING_DIVERGED;
    case ErrorCode::InsufficientPool: return ALEARN_ERR_INSUFFICIENT_POOL;
    case ErrorCode::Internal: return ALEARN_ERR_INTERNAL;
  }
  return ALEARN_ERR_INTERNAL;
}

template <typename F>
alearn_status guard(F&& f) {
  try {
    g_last_error.clear();
    f();
    return ALEARN_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return ALEARN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ALEARN_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return ALEARN_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) alearn::fail(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void put_string(char** out, const std::string& s) {
  require(out, "output pointer");
  *out = dup_string(s);
}

}  // namespace

extern "C" {

const char* alearn_version(void) { return ALEARN_VERSION_STRING; }

const char* alearn_status_name(alearn_status status) {
  switch (status) {
    case ALEARN_OK: return "ok";
    case ALEARN_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case ALEARN_ERR_VALIDATION: return "validation";
    case ALEARN_ERR_NOT_FOUND: return "not_found";
    case ALEARN_ERR_CONFLICT: return "conflict";
    case ALEARN_ERR_DATA: return "data";
    case ALEARN_ERR_IO: return "io";
    case ALEARN_ERR_CONFIGURATION: return "configuration";
    case ALEARN_ERR_TRAINING_DIVERGED: return "training_diverged";
    case ALEARN_ERR_INSUFFICIENT_POOL: return "insufficient_pool";
    case ALEARN_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* alearn_last_error(void) { return g_last_error.c_str(); }

void alearn_string_free(char* s) { std::free(s); }

// ---- datasets -----------------------------------------------------------

alearn_status alearn_dataset_generate(const char* params_json, size_t n, alearn_dataset** out) {
  return guard([&] {
    require(out, "out");
    *out = nullptr;
    const auto params = params_json ? alearn::data::synth_params_from_json(params_json)
                                    : alearn::data::SynthParams{};
    if (n < 2) alearn::fail(ErrorCode::Validation, "need at least 2 samples");
    *out = new alearn_dataset{alearn::data::generate_synthetic(params, n)};
  });
}

alearn_status alearn_dataset_ingest_directory(const char* path, int unlabeled, int resize,
                                              alearn_dataset** out, char** file_errors_json) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    if (file_errors_json) *file_errors_json = nullptr;
    alearn::data::IngestOptions options;
    options.labeling = unlabeled ? alearn::data::Labeling::Unlabeled
                                 : alearn::data::Labeling::FromSubdirectories;
    options.resize = resize != 0;
    auto result = alearn::data::ingest_directory(path, options);
    if (file_errors_json) *file_errors_json = dup_string(json(result.file_errors).dump());
    *out = new alearn_dataset{std::move(result.dataset)};
  });
}

alearn_status alearn_dataset_ingest_features(const char* features_csv, const char* labels_csv,
                                             alearn_dataset** out) {
  return guard([&] {
    require(features_csv, "features_csv");
    require(out, "out");
    *out = nullptr;
    std::optional<std::filesystem::path> labels;
    if (labels_csv) labels = labels_csv;
    *out = new alearn_dataset{alearn::data::ingest_features(features_csv, labels)};
  });
}

alearn_status alearn_dataset_save(const alearn_dataset* dataset, const char* dir) {
  return guard([&] {
    require(dataset, "dataset");
    require(dir, "dir");
    alearn::data::save_dataset(dataset->dataset, dir);
  });
}

alearn_status alearn_dataset_load(const char* dir, alearn_dataset** out) {
  return guard([&] {
    require(dir, "dir");
    require(out, "out");
    *out = nullptr;
    *out = new alearn_dataset{alearn::data::load_dataset(dir)};
  });
}

alearn_status alearn_dataset_manifest(const alearn_dataset* dataset, char** out_json) {
  return guard([&] {
    require(dataset, "dataset");
    put_string(out_json, alearn::data::format_manifest(dataset->dataset.manifest()));
  });
}

size_t alearn_dataset_size(const alearn_dataset* dataset) {
  return dataset ? dataset->dataset.size() : 0;
}

void alearn_dataset_free(alearn_dataset* dataset) { delete dataset; }

// ---- experiments --------------------------------------------------------

alearn_status alearn_preset_names(char** out_json) {
  return guard([&] { put_string(out_json, json(alearn::engine::preset_names()).dump()); });
}

alearn_status alearn_preset_config(const char* name, uint64_t seed, char** out_json) {
  return guard([&] {
    require(name, "name");
    put_string(out_json, alearn::engine::config_to_json(alearn::engine::preset(name, seed)));
  });
}

alearn_status alearn_config_normalize(const char* config_json, char** out_json) {
  return guard([&] {
    require(config_json, "config_json");
    put_string(out_json,
               alearn::engine::config_to_json(alearn::engine::config_from_json(config_json)));
  });
}

alearn_status alearn_run_experiment(const char* config_json, const alearn_dataset* dataset,
                                    alearn_log** out) {
  return guard([&] {
    require(out, "out");
    *out = nullptr;
    require(config_json, "config_json");
    require(dataset, "dataset");
    const auto config = alearn::engine::config_from_json(config_json);
    try {
      auto result = alearn::engine::run_experiment(config, dataset->dataset);
      *out = new alearn_log{std::move(result.log)};
    } catch (const alearn::engine::RunAborted& e) {
      if (!e.partial().rows.empty()) *out = new alearn_log{e.partial()};
      throw;
    }
  });
}

alearn_status alearn_log_read(const char* path, alearn_log** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new alearn_log{alearn::engine::read_metrics_csv(path)};
  });
}

alearn_status alearn_log_parse(const char* csv, alearn_log** out) {
  return guard([&] {
    require(csv, "csv");
    require(out, "out");
    *out = nullptr;
    *out = new alearn_log{alearn::engine::parse_metrics_csv(csv)};
  });
}

alearn_status alearn_log_csv(const alearn_log* log, char** out_csv) {
  return guard([&] {
    require(log, "log");
    put_string(out_csv, alearn::engine::format_metrics_csv(log->log));
  });
}

alearn_status alearn_log_write(const alearn_log* log, const char* path) {
  return guard([&] {
    require(log, "log");
    require(path, "path");
    alearn::write_file_atomic(path, alearn::engine::format_metrics_csv(log->log));
  });
}

size_t alearn_log_row_count(const alearn_log* log) { return log ? log->log.rows.size() : 0; }

alearn_status alearn_log_summary(const alearn_log* log, char** out_json) {
  return guard([&] {
    require(log, "log");
    put_string(out_json,
               alearn::engine::summary_to_json(alearn::engine::last_query_summary(log->log)));
  });
}

void alearn_log_free(alearn_log* log) { delete log; }

alearn_status alearn_compare(const alearn_log* a, const alearn_log* b, const size_t* counts,
                             size_t n_counts, char** out_csv) {
  return guard([&] {
    require(a, "a");
    require(b, "b");
    if (n_counts > 0) require(counts, "counts");
    std::vector<std::size_t> aligned(counts, counts + n_counts);
    const auto rows = alearn::engine::compare_runs(a->log, b->log, aligned);
    put_string(out_csv, alearn::engine::format_comparison_csv(rows));
  });
}

alearn_status alearn_write_file_atomic(const char* path, const char* contents) {
  return guard([&] {
    require(path, "path");
    require(contents, "contents");
    alearn::write_file_atomic(path, contents);
  });
}

// ---- service ------------------------------------------------------------

alearn_status alearn_service_create(const char* host, int port, const char* data_dir,
                                    size_t workers, alearn_service** out) {
  return guard([&] {
    require(out, "out");
    *out = nullptr;
    require(data_dir, "data_dir");
    if (port < 0 || port > 65535) alearn::fail(ErrorCode::InvalidArgument, "port out of range");
    alearn::service::ServiceConfig config;
    if (host) config.host = host;
    config.port = port;
    config.data_dir = data_dir;
    if (workers > 0) config.workers = workers;
    *out = new alearn_service{std::make_unique<alearn::service::Service>(config)};
  });
}

alearn_status alearn_service_start(alearn_service* service, int* port_out) {
  return guard([&] {
    require(service, "service");
    const int port = service->service->start();
    if (port_out) *port_out = port;
  });
}

alearn_status alearn_service_run(alearn_service* service) {
  return guard([&] {
    require(service, "service");
    service->service->run();
  });
}

alearn_status alearn_service_stop(alearn_service* service) {
  return guard([&] {
    require(service, "service");
    service->service->stop();
  });
}

int alearn_service_port(const alearn_service* service) {
  return service ? service->service->port() : -1;
}

void alearn_service_free(alearn_service* service) { delete service; }

}  // extern "C"
