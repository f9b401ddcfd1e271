// alearn command-line driver. Talks to the library only through the C API.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alearn/alearn.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRun = 4;

struct CliFailure {
  int exit_code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& message) {
  throw CliFailure{kExitUsage, message};
}

int exit_code_for(alearn_status status) {
  switch (status) {
    case ALEARN_OK: return kExitOk;
    case ALEARN_ERR_INVALID_ARGUMENT: return kExitUsage;
    case ALEARN_ERR_VALIDATION:
    case ALEARN_ERR_NOT_FOUND:
    case ALEARN_ERR_CONFLICT:
    case ALEARN_ERR_DATA:
    case ALEARN_ERR_IO: return kExitData;
    case ALEARN_ERR_CONFIGURATION:
    case ALEARN_ERR_TRAINING_DIVERGED:
    case ALEARN_ERR_INSUFFICIENT_POOL:
    case ALEARN_ERR_INTERNAL: return kExitRun;
  }
  return kExitRun;
}

void check(alearn_status status, const std::string& context) {
  if (status == ALEARN_OK) return;
  throw CliFailure{exit_code_for(status), context + ": " + alearn_last_error()};
}

// RAII holders for C handles and strings.
struct CString {
  char* p = nullptr;
  ~CString() { alearn_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct Dataset {
  alearn_dataset* p = nullptr;
  ~Dataset() { alearn_dataset_free(p); }
};

struct Log {
  alearn_log* p = nullptr;
  ~Log() { alearn_log_free(p); }
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliFailure{kExitData, "cannot read " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  check(alearn_write_file_atomic(path.c_str(), text.c_str()), "writing " + path);
}

std::string manifest_id(const Dataset& ds) {
  CString manifest;
  check(alearn_dataset_manifest(ds.p, &manifest.p), "reading manifest");
  return json::parse(manifest.str()).at("dataset_id").get<std::string>();
}

// ---------------------------------------------------------------------------

struct GenerateOptions {
  long long n = 300;
  std::uint64_t seed = 7;
  std::optional<double> defect_fraction;
  std::optional<std::size_t> size;
  std::string params_file;
  std::string out;
};

int cmd_generate(const GenerateOptions& o) {
  if (o.n < 2) usage_error("--n must be at least 2");
  json params = json::object();
  if (!o.params_file.empty()) {
    try {
      params = json::parse(read_text(o.params_file));
    } catch (const json::exception& e) {
      throw CliFailure{kExitData, o.params_file + ": " + e.what()};
    }
  }
  params["seed"] = o.seed;
  if (o.defect_fraction) params["defect_fraction"] = *o.defect_fraction;
  if (o.size) {
    params["height"] = *o.size;
    params["width"] = *o.size;
  }
  Dataset ds;
  check(alearn_dataset_generate(params.dump().c_str(), static_cast<size_t>(o.n), &ds.p),
        "generate");
  const std::string dir = o.out.empty() ? "datasets/" + manifest_id(ds) : o.out;
  check(alearn_dataset_save(ds.p, dir.c_str()), "saving dataset");
  std::cout << (fs::path(dir) / "manifest.json").string() << '\n';
  return kExitOk;
}

struct IngestOptions {
  std::string dir;
  std::string features;
  std::string labels;
  bool unlabeled = false;
  bool resize = false;
  std::string out;
};

int cmd_ingest(const IngestOptions& o) {
  if (o.dir.empty() == o.features.empty()) usage_error("give exactly one of --dir or --features");
  if (!o.labels.empty() && o.features.empty()) usage_error("--labels needs --features");
  Dataset ds;
  if (!o.dir.empty()) {
    CString errors;
    const auto status = alearn_dataset_ingest_directory(o.dir.c_str(), o.unlabeled ? 1 : 0,
                                                        o.resize ? 1 : 0, &ds.p, &errors.p);
    if (errors.p) {
      for (const auto& e : json::parse(errors.str())) {
        std::cerr << "skipped: " << e.get<std::string>() << '\n';
      }
    }
    check(status, "ingest " + o.dir);
  } else {
    check(alearn_dataset_ingest_features(o.features.c_str(),
                                         o.labels.empty() ? nullptr : o.labels.c_str(), &ds.p),
          "ingest " + o.features);
  }
  const std::string dir = o.out.empty() ? "datasets/" + manifest_id(ds) : o.out;
  check(alearn_dataset_save(ds.p, dir.c_str()), "saving dataset");
  std::cout << (fs::path(dir) / "manifest.json").string() << '\n';
  return kExitOk;
}

struct RunOptions {
  std::string preset;
  std::string config;
  std::string dataset;
  std::string out = "runs/latest";
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunOptions& o) {
  if (o.preset.empty() == o.config.empty()) usage_error("give exactly one of --preset or --config");
  json config;
  if (!o.preset.empty()) {
    CString text;
    const auto status = alearn_preset_config(o.preset.c_str(), o.seed.value_or(7), &text.p);
    if (status != ALEARN_OK) usage_error(alearn_last_error());
    config = json::parse(text.str());
  } else {
    try {
      config = json::parse(read_text(o.config));
    } catch (const json::exception& e) {
      throw CliFailure{kExitData, o.config + ": " + e.what()};
    }
    if (o.seed) config["seed"] = *o.seed;
  }

  Dataset ds;
  check(alearn_dataset_load(o.dataset.c_str(), &ds.p), "loading dataset " + o.dataset);

  const fs::path out(o.out);
  const auto metrics_path = (out / "metrics.csv").string();
  const auto summary_path = (out / "summary.json").string();
  Log log;
  const auto status = alearn_run_experiment(config.dump().c_str(), ds.p, &log.p);
  if (status != ALEARN_OK) {
    const std::string message = alearn_last_error();
    if (log.p) {
      check(alearn_log_write(log.p, metrics_path.c_str()), "writing " + metrics_path);
      std::cerr << "partial metrics: " << metrics_path << '\n';
    }
    throw CliFailure{status == ALEARN_ERR_VALIDATION ? kExitData : kExitRun, "run: " + message};
  }
  CString summary;
  check(alearn_log_summary(log.p, &summary.p), "summary");
  check(alearn_log_write(log.p, metrics_path.c_str()), "writing " + metrics_path);
  check(alearn_write_file_atomic(summary_path.c_str(), (summary.str() + "\n").c_str()),
        "writing " + summary_path);
  std::cout << metrics_path << '\n' << summary_path << '\n';
  return kExitOk;
}

struct CompareOptions {
  std::string a;
  std::string b;
  std::vector<std::size_t> counts;
  std::string out;
};

int cmd_compare(const CompareOptions& o) {
  Log a;
  Log b;
  check(alearn_log_read(o.a.c_str(), &a.p), "reading " + o.a);
  check(alearn_log_read(o.b.c_str(), &b.p), "reading " + o.b);
  CString csv;
  check(alearn_compare(a.p, b.p, o.counts.empty() ? nullptr : o.counts.data(), o.counts.size(),
                       &csv.p),
        "compare");
  write_output(o.out, csv.str());
  return kExitOk;
}

struct SummaryOptions {
  std::string log;
  std::string out;
};

int cmd_summary(const SummaryOptions& o) {
  Log log;
  check(alearn_log_read(o.log.c_str(), &log.p), "reading " + o.log);
  CString summary;
  check(alearn_log_summary(log.p, &summary.p), "summary of " + o.log);
  write_output(o.out, summary.str() + "\n");
  return kExitOk;
}

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "alearn-data";
  std::size_t workers = 8;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

int cmd_serve(const ServeOptions& o) {
  alearn_service* service = nullptr;
  check(alearn_service_create(o.host.c_str(), o.port, o.data_dir.c_str(), o.workers, &service),
        "service");
  int port = 0;
  const auto status = alearn_service_start(service, &port);
  if (status != ALEARN_OK) {
    const std::string message = alearn_last_error();
    alearn_service_free(service);
    throw CliFailure{exit_code_for(status), "serve: " + message};
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << o.host << ':' << port << "/v1" << std::endl;
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  alearn_service_stop(service);
  alearn_service_free(service);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"alearn: pool-based active learning for binary defect classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(alearn_version()));

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic emission-image dataset");
  generate->add_option("--n", gen.n, "Number of samples")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  generate->add_option("--defect-fraction", gen.defect_fraction, "Share of defect samples");
  generate->add_option("--size", gen.size, "Image edge length in pixels");
  generate->add_option("--params", gen.params_file, "JSON file with generator parameters");
  generate->add_option("--out", gen.out, "Output directory (default datasets/<id>)");

  IngestOptions ing;
  auto* ingest = app.add_subcommand("ingest", "Ingest an image directory or a feature CSV");
  ingest->add_option("--dir", ing.dir, "Image directory (normal/ and defect/ subdirectories)");
  ingest->add_option("--features", ing.features, "Feature CSV: sample_id,f0,...");
  ingest->add_option("--labels", ing.labels, "Label CSV for --features: sample_id,label");
  ingest->add_flag("--unlabeled", ing.unlabeled, "Ignore subdirectory names");
  ingest->add_flag("--resize", ing.resize, "Resize images to the first image's size");
  ingest->add_option("--out", ing.out, "Output directory (default datasets/<id>)");

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment with the simulated oracle");
  auto* preset_opt = run_cmd->add_option("--preset", run.preset, "Preset name");
  auto* config_opt = run_cmd->add_option("--config", run.config, "Experiment config JSON file");
  preset_opt->excludes(config_opt);
  run_cmd->add_option("--dataset", run.dataset, "Dataset directory")->required();
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--seed", run.seed, "Experiment seed");

  CompareOptions cmp;
  auto* compare = app.add_subcommand("compare", "Align two runs by cumulative queried samples");
  compare->add_option("a", cmp.a, "Metrics CSV of run a")->required();
  compare->add_option("b", cmp.b, "Metrics CSV of run b")->required();
  compare->add_option("--counts", cmp.counts, "Cumulative sample counts to align")->delimiter(',');
  compare->add_option("--out", cmp.out, "Output CSV (default stdout)");

  SummaryOptions sum;
  auto* summary = app.add_subcommand("summary", "Last-query mean and std after outlier removal");
  summary->add_option("log", sum.log, "Metrics CSV")->required();
  summary->add_option("--out", sum.out, "Output JSON (default stdout)");

  ServeOptions srv;
  auto* serve = app.add_subcommand("serve", "Run the annotation service");
  serve->add_option("--host", srv.host, "Listen address")->envname("ALEARN_HOST")->capture_default_str();
  serve->add_option("--port", srv.port, "Listen port, 0 for any")->envname("ALEARN_PORT")->capture_default_str();
  serve->add_option("--data-dir", srv.data_dir, "Data directory")->envname("ALEARN_DATA_DIR")->capture_default_str();
  serve->add_option("--workers", srv.workers, "HTTP worker threads")->envname("ALEARN_WORKERS")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*ingest) return cmd_ingest(ing);
    if (*run_cmd) return cmd_run(run);
    if (*compare) return cmd_compare(cmp);
    if (*summary) return cmd_summary(sum);
    if (*serve) return cmd_serve(srv);
  } catch (const CliFailure& f) {
    std::cerr << "alearn: " << f.message << '\n';
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "alearn: " << e.what() << '\n';
    return kExitRun;
  }
  return kExitUsage;
}
