#include "service.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "data.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "fsutil.hpp"
#include "image_io.hpp"

namespace alearn::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(SessionState state) noexcept {
  switch (state) {
    case SessionState::Initializing: return "initializing";
    case SessionState::Training: return "training";
    case SessionState::AwaitingLabels: return "awaiting_labels";
    case SessionState::Complete: return "complete";
    case SessionState::Failed: return "failed";
  }
  return "unknown";
}

namespace {

std::optional<SessionState> parse_state(std::string_view s) {
  for (auto st : {SessionState::Initializing, SessionState::Training,
                  SessionState::AwaitingLabels, SessionState::Complete, SessionState::Failed}) {
    if (s == to_string(st)) return st;
  }
  return std::nullopt;
}

// Raised by handlers; rendered as a problem document.
struct HttpError {
  int status;
  std::string code;
  std::string message;
  json details = json::object();
};

[[noreturn]] void http_fail(int status, std::string code, std::string message,
                            json details = json::object()) {
  throw HttpError{status, std::move(code), std::move(message), std::move(details)};
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Validation:
    case ErrorCode::Configuration: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict:
    case ErrorCode::InsufficientPool: return 409;
    case ErrorCode::Data: return 422;
    case ErrorCode::Io:
    case ErrorCode::TrainingDiverged:
    case ErrorCode::Internal: return 500;
  }
  return 500;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_problem(httplib::Response& res, const HttpError& e) {
  send_json(res, e.status, json{{"code", e.code}, {"message", e.message}, {"details", e.details}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) http_fail(400, "validation", "request body must be a JSON object");
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) http_fail(400, "validation", "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    http_fail(400, "validation", std::string("request body is not valid JSON: ") + e.what());
  }
}

std::string encode_path_segment(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 15];
    }
  }
  return out;
}

json row_to_json(const engine::MetricsRow& r) {
  return json{{"query_index", r.query_index},     {"epoch", r.epoch},
              {"train_accuracy", r.train_accuracy}, {"train_loss", r.train_loss},
              {"test_accuracy", r.test_accuracy},   {"test_loss", r.test_loss}};
}

// ---------------------------------------------------------------------------

class DatasetRegistry {
 public:
  explicit DatasetRegistry(fs::path root) : root_(std::move(root)) {}

  void load_all() {
    if (!fs::exists(root_)) return;
    for (const auto& entry : fs::directory_iterator(root_)) {
      if (!entry.is_directory() || !fs::exists(entry.path() / "manifest.json")) continue;
      try {
        auto ds = std::make_shared<data::Dataset>(data::load_dataset(entry.path()));
        std::lock_guard lock(mu_);
        datasets_.emplace(ds->id(), std::move(ds));
      } catch (const Error& e) {
        std::fprintf(stderr, "alearn: skipping dataset %s: %s\n", entry.path().c_str(), e.what());
      }
    }
  }

  std::shared_ptr<data::Dataset> get(std::string_view id) const {
    std::lock_guard lock(mu_);
    const auto it = datasets_.find(std::string(id));
    return it == datasets_.end() ? nullptr : it->second;
  }

  std::vector<std::shared_ptr<data::Dataset>> all() const {
    std::lock_guard lock(mu_);
    std::vector<std::shared_ptr<data::Dataset>> out;
    for (const auto& [id, ds] : datasets_) out.push_back(ds);
    return out;
  }

  // Stores a new dataset; an existing one with the same id wins.
  std::pair<std::shared_ptr<data::Dataset>, bool> add(data::Dataset dataset) {
    std::lock_guard lock(mu_);
    if (const auto it = datasets_.find(dataset.id()); it != datasets_.end()) {
      return {it->second, false};
    }
    const auto dir = root_ / dataset.id();
    data::save_dataset(dataset, dir);
    dataset.attach_label_store(dir / "labels.jsonl");
    auto ptr = std::make_shared<data::Dataset>(std::move(dataset));
    datasets_.emplace(ptr->id(), ptr);
    return {ptr, true};
  }

 private:
  fs::path root_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<data::Dataset>> datasets_;
};

// ---------------------------------------------------------------------------

struct Session {
  std::string id;
  std::string dataset_id;
  engine::ExperimentConfig config;
  std::shared_ptr<data::Dataset> dataset;
  fs::path dir;

  // Touched only by the worker thread, except while the worker waits for
  // labels or before it starts.
  std::unique_ptr<engine::ActiveLearningRun> run;

  mutable std::mutex mu;
  mutable std::condition_variable cv;
  SessionState state = SessionState::Initializing;
  std::optional<engine::QueryBatch> pending;
  std::vector<std::string> pending_ids;
  std::map<std::string, data::Label> partial;   // labels received for the pending batch
  std::map<std::string, data::Label> accepted;  // every label this session accepted
  std::shared_ptr<const std::vector<engine::MetricsRow>> rows =
      std::make_shared<const std::vector<engine::MetricsRow>>();
  std::optional<engine::RunSummary> summary;
  std::string error_code;
  std::string error_message;
  int completed_queries = 0;
  std::size_t teach_size = 0;
  std::size_t pool_size = 0;
  std::size_t test_size = 0;
  std::string snapshot;
  bool stopping = false;

  std::thread worker;

  bool settled() const {
    return state != SessionState::Initializing && state != SessionState::Training;
  }
};

}  // namespace

// ---------------------------------------------------------------------------

struct Service::Impl {
  ServiceConfig config;
  DatasetRegistry datasets;
  httplib::Server server;
  std::thread server_thread;
  int bound_port = -1;
  std::atomic<bool> stopped{false};

  mutable std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  int next_session = 1;

  explicit Impl(ServiceConfig cfg)
      : config(std::move(cfg)), datasets(config.data_dir / "datasets") {
    fs::create_directories(config.data_dir / "datasets");
    fs::create_directories(config.data_dir / "sessions");
    datasets.load_all();
    restore_sessions();
    install_routes();
  }

  fs::path sessions_root() const { return config.data_dir / "sessions"; }

  std::shared_ptr<Session> find_session(const std::string& id) const {
    std::lock_guard lock(sessions_mu);
    const auto it = sessions.find(id);
    if (it == sessions.end()) http_fail(404, "not_found", "unknown session '" + id + "'");
    return it->second;
  }

  // ---- persistence ------------------------------------------------------

  // Caller holds s.mu.
  void persist(const Session& s) {
    json partial = json::object();
    for (const auto& [id, label] : s.partial) partial[id] = std::string(data::to_string(label));
    json accepted = json::object();
    for (const auto& [id, label] : s.accepted) accepted[id] = std::string(data::to_string(label));
    json j{{"format", "alearn-session"},
           {"version", 1},
           {"session_id", s.id},
           {"dataset_id", s.dataset_id},
           {"config", json::parse(engine::config_to_json(s.config))},
           {"state", std::string(to_string(s.state))},
           {"partial_labels", std::move(partial)},
           {"accepted_labels", std::move(accepted)},
           {"error", {{"code", s.error_code}, {"message", s.error_message}}},
           {"run", s.snapshot}};
    try {
      write_file_atomic(s.dir / "session.json", j.dump());
    } catch (const Error& e) {
      std::fprintf(stderr, "alearn: cannot persist session %s: %s\n", s.id.c_str(), e.what());
    }
  }

  void restore_sessions() {
    if (!fs::exists(sessions_root())) return;
    for (const auto& entry : fs::directory_iterator(sessions_root())) {
      const auto file = entry.path() / "session.json";
      if (!fs::exists(file)) continue;
      try {
        restore_session(entry.path(), json::parse(read_file_text(file)));
      } catch (const std::exception& e) {
        std::fprintf(stderr, "alearn: skipping session %s: %s\n", entry.path().c_str(), e.what());
      }
    }
  }

  void restore_session(const fs::path& dir, const json& j) {
    auto s = std::make_shared<Session>();
    s->id = j.at("session_id").get<std::string>();
    s->dataset_id = j.at("dataset_id").get<std::string>();
    s->dir = dir;
    s->config = engine::config_from_json(j.at("config").dump());
    s->state = parse_state(j.at("state").get<std::string>()).value_or(SessionState::Failed);
    s->error_code = j.at("error").value("code", "");
    s->error_message = j.at("error").value("message", "");
    for (const auto& [id, v] : j.at("partial_labels").items()) {
      s->partial.emplace(id, data::parse_label(v.get<std::string>()).value());
    }
    for (const auto& [id, v] : j.at("accepted_labels").items()) {
      s->accepted.emplace(id, data::parse_label(v.get<std::string>()).value());
    }
    s->snapshot = j.at("run").get<std::string>();
    {
      int number = 0;
      const auto& sid = s->id;
      const auto dash = sid.rfind('-');
      if (dash != std::string::npos) {
        std::from_chars(sid.data() + dash + 1, sid.data() + sid.size(), number);
      }
      next_session = std::max(next_session, number + 1);
    }

    s->dataset = datasets.get(s->dataset_id);
    if (!s->dataset) {
      s->state = SessionState::Failed;
      s->error_code = "not_found";
      s->error_message = "dataset '" + s->dataset_id + "' is no longer available";
    } else if (s->state != SessionState::Failed) {
      try {
        s->run = std::make_unique<engine::ActiveLearningRun>(
            s->snapshot.empty()
                ? engine::ActiveLearningRun(s->config, *s->dataset)
                : engine::ActiveLearningRun::restore(s->config, *s->dataset, s->snapshot));
        refresh_progress(*s);
        if (const auto* p = s->run->pending()) {
          set_pending(*s, *p);
          s->state = s->partial.size() == s->pending_ids.size() ? SessionState::Training
                                                                : SessionState::AwaitingLabels;
        } else if (s->run->finished()) {
          s->state = SessionState::Complete;
          s->summary = engine::last_query_summary(s->run->log());
        } else {
          s->state = s->run->initialized() ? SessionState::Training : SessionState::Initializing;
        }
      } catch (const Error& e) {
        s->state = SessionState::Failed;
        s->error_code = to_string(e.code());
        s->error_message = e.what();
      }
    }
    {
      std::lock_guard lock(sessions_mu);
      sessions.emplace(s->id, s);
    }
    if (s->state != SessionState::Complete && s->state != SessionState::Failed) {
      s->worker = std::thread([this, s] { work(s); });
    }
  }

  // ---- worker -----------------------------------------------------------

  // Caller holds s.mu; the run must not be training.
  void refresh_progress(Session& s) {
    const auto& run = *s.run;
    s.rows = std::make_shared<const std::vector<engine::MetricsRow>>(run.log().rows);
    s.completed_queries = run.completed_queries();
    s.teach_size = run.state().teach.size();
    s.pool_size = run.state().pool.size();
    s.test_size = run.state().test.size();
  }

  // Caller holds s.mu. Pending ids already labeled in the dataset (by an
  // earlier session, or before a crash) are adopted without a new commit.
  void set_pending(Session& s, const engine::QueryBatch& batch) {
    s.pending = batch;
    s.pending_ids.clear();
    for (const auto idx : batch.sample_ids) {
      const auto& sid = s.dataset->at(idx).id;
      s.pending_ids.push_back(sid);
      if (const auto label = s.dataset->committed_label(sid); label && !s.partial.count(sid)) {
        s.partial.emplace(sid, *label);
        s.accepted.emplace(sid, *label);
      }
    }
  }

  void checkpoint(Session& s, std::optional<SessionState> state = std::nullopt) {
    std::lock_guard lock(s.mu);
    refresh_progress(s);
    s.snapshot = s.run->snapshot_json();
    if (state) s.state = *state;
    persist(s);
    s.cv.notify_all();
  }

  void work(const std::shared_ptr<Session>& sp) {
    Session& s = *sp;
    auto& run = *s.run;
    try {
      if (!run.initialized()) {
        run.initialize();
        checkpoint(s);
      }
      for (;;) {
        {
          std::lock_guard lock(s.mu);
          if (s.stopping) return;
        }
        if (const auto* p = run.pending()) {
          std::vector<data::Label> labels;
          {
            std::unique_lock lock(s.mu);
            if (!s.pending) set_pending(s, *p);
            if (s.partial.size() < s.pending_ids.size()) {
              s.state = SessionState::AwaitingLabels;
              persist(s);
              s.cv.notify_all();
            }
            s.cv.wait(lock, [&] {
              return s.stopping || s.partial.size() == s.pending_ids.size();
            });
            if (s.stopping) return;
            for (const auto& sid : s.pending_ids) labels.push_back(s.partial.at(sid));
          }
          run.apply_labels(labels);
          {
            std::lock_guard lock(s.mu);
            s.pending.reset();
            s.pending_ids.clear();
            s.partial.clear();
          }
          checkpoint(s, SessionState::Training);
          continue;
        }
        if (run.state().history.size() > static_cast<std::size_t>(run.completed_queries())) {
          run.train_current();
          checkpoint(s);
          continue;
        }
        if (run.finished()) {
          std::lock_guard lock(s.mu);
          refresh_progress(s);
          s.snapshot = run.snapshot_json();
          s.summary = engine::last_query_summary(run.log());
          s.state = SessionState::Complete;
          persist(s);
          s.cv.notify_all();
          return;
        }
        {
          std::lock_guard lock(s.mu);
          if (s.state == SessionState::Initializing &&
              s.config.oracle == engine::OracleMode::Simulated) {
            s.state = SessionState::Training;
          }
        }
        if (s.config.oracle == engine::OracleMode::Simulated) {
          run.run_query_iteration();
          checkpoint(s, SessionState::Training);
        } else {
          run.select_query();
          checkpoint(s);
        }
      }
    } catch (const Error& e) {
      mark_failed(s, to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      mark_failed(s, "internal", e.what());
    }
  }

  void mark_failed(Session& s, const std::string& code, const std::string& message) {
    std::lock_guard lock(s.mu);
    s.state = SessionState::Failed;
    s.error_code = code;
    s.error_message = message;
    persist(s);
    s.cv.notify_all();
  }

  // ---- views ------------------------------------------------------------

  json session_view(const Session& s) const {
    std::lock_guard lock(s.mu);
    json j{{"session_id", s.id},
           {"dataset_id", s.dataset_id},
           {"state", std::string(to_string(s.state))},
           {"oracle", std::string(engine::to_string(s.config.oracle))},
           {"config", json::parse(engine::config_to_json(s.config))},
           {"progress",
            {{"completed_queries", s.completed_queries},
             {"total_queries", s.config.queries},
             {"teach_size", s.teach_size},
             {"pool_size", s.pool_size},
             {"test_size", s.test_size},
             {"metrics_rows", s.rows->size()}}},
           {"links",
            {{"query", "/v1/sessions/" + s.id + "/query"},
             {"labels", "/v1/sessions/" + s.id + "/labels"},
             {"metrics", "/v1/sessions/" + s.id + "/metrics"}}}};
    j["pending_query"] = s.pending ? json(s.pending->query_index) : json();
    if (s.state == SessionState::Failed) {
      j["error"] = {{"code", s.error_code}, {"message", s.error_message}};
    }
    if (s.summary) j["summary"] = json::parse(engine::summary_to_json(*s.summary));
    return j;
  }

  json query_view(const Session& s) const {
    json samples = json::array();
    json remaining = json::array();
    for (std::size_t i = 0; i < s.pending_ids.size(); ++i) {
      const auto& sid = s.pending_ids[i];
      const auto it = s.partial.find(sid);
      const auto& sample = s.dataset->at(s.pending->sample_ids[i]);
      json entry{{"sample_id", sid}, {"score", s.pending->scores[i]}};
      entry["image_url"] = sample.image ? json("/v1/samples/" + encode_path_segment(sid) +
                                               "/image?dataset=" + s.dataset_id)
                                        : json();
      entry["label"] = it == s.partial.end() ? json() : json(std::string(data::to_string(it->second)));
      if (it == s.partial.end()) remaining.push_back(sid);
      samples.push_back(std::move(entry));
    }
    return json{{"session_id", s.id},
                {"query_index", s.pending->query_index},
                {"strategy", std::string(strategies::to_string(s.pending->strategy))},
                {"status", "pending"},
                {"batch_size", s.pending_ids.size()},
                {"samples", std::move(samples)},
                {"remaining", std::move(remaining)}};
  }

  // ---- handlers ---------------------------------------------------------

  json create_dataset(const json& body) {
    const std::string kind = body.value("kind", "");
    std::vector<std::string> file_errors;
    data::Dataset dataset = [&]() -> data::Dataset {
      if (kind == "synthetic") {
        if (!body.contains("n") || !body["n"].is_number_unsigned()) {
          http_fail(400, "validation", "synthetic datasets need a non-negative integer 'n'");
        }
        const auto n = body["n"].get<std::size_t>();
        if (n < 2) http_fail(400, "validation", "synthetic datasets need n >= 2");
        const auto params = data::synth_params_from_json(
            body.contains("params") ? body["params"].dump() : std::string("{}"));
        return data::generate_synthetic(params, n);
      }
      if (kind == "directory") {
        data::IngestOptions options;
        const std::string labeling = body.value("labeling", "subdirectories");
        if (labeling == "subdirectories") {
          options.labeling = data::Labeling::FromSubdirectories;
        } else if (labeling == "unlabeled") {
          options.labeling = data::Labeling::Unlabeled;
        } else {
          http_fail(400, "validation", "labeling must be 'subdirectories' or 'unlabeled'");
        }
        options.resize = body.value("resize", false);
        if (!body.contains("path")) http_fail(400, "validation", "directory datasets need 'path'");
        auto result = data::ingest_directory(body["path"].get<std::string>(), options);
        file_errors = result.file_errors;
        return std::move(result.dataset);
      }
      if (kind == "features") {
        if (!body.contains("features_csv")) {
          http_fail(400, "validation", "feature datasets need 'features_csv'");
        }
        std::optional<fs::path> labels;
        if (body.contains("labels_csv")) labels = body["labels_csv"].get<std::string>();
        return data::ingest_features(body["features_csv"].get<std::string>(), labels);
      }
      http_fail(400, "validation", "kind must be 'synthetic', 'directory' or 'features'");
    }();
    auto [ptr, created] = datasets.add(std::move(dataset));
    json j{{"dataset_id", ptr->id()},
           {"created", created},
           {"manifest", json::parse(data::format_manifest(ptr->manifest()))},
           {"file_errors", file_errors}};
    return j;
  }

  json create_session(const json& body) {
    if (!body.contains("dataset_id") || !body["dataset_id"].is_string()) {
      http_fail(400, "validation", "session needs a string 'dataset_id'");
    }
    const auto dataset_id = body["dataset_id"].get<std::string>();
    json config_doc = body.contains("config") ? body["config"] : json::object();
    if (!config_doc.is_object()) http_fail(400, "validation", "'config' must be an object");
    if (!config_doc.contains("oracle")) config_doc["oracle"] = "human";
    auto config = engine::config_from_json(config_doc.dump());
    auto dataset = datasets.get(dataset_id);
    if (!dataset) http_fail(404, "not_found", "unknown dataset '" + dataset_id + "'");

    auto s = std::make_shared<Session>();
    s->dataset_id = dataset_id;
    s->config = config;
    s->dataset = dataset;
    s->run = std::make_unique<engine::ActiveLearningRun>(config, *dataset);
    {
      std::lock_guard lock(sessions_mu);
      char buf[32];
      std::snprintf(buf, sizeof buf, "sess-%06d", next_session++);
      s->id = buf;
      s->dir = sessions_root() / s->id;
      sessions.emplace(s->id, s);
    }
    {
      std::lock_guard lock(s->mu);
      refresh_progress(*s);
      persist(*s);
    }
    s->worker = std::thread([this, s] { work(s); });
    return session_view(*s);
  }

  json get_query(const Session& s) const {
    std::lock_guard lock(s.mu);
    if (s.state != SessionState::AwaitingLabels || !s.pending) {
      json details{{"state", std::string(to_string(s.state))}};
      if (s.state == SessionState::Complete) {
        details["summary_url"] = "/v1/sessions/" + s.id + "/metrics";
      }
      http_fail(409, "wrong_state",
                "session '" + s.id + "' is " + std::string(to_string(s.state)) +
                    ", no query is pending",
                details);
    }
    return query_view(s);
  }

  json submit_labels(Session& s, const json& body) {
    const std::string annotator = body.value("annotator", "anonymous");
    if (!body.contains("labels") || !body["labels"].is_object()) {
      http_fail(400, "validation", "'labels' must map sample ids to labels");
    }
    std::vector<std::pair<std::string, data::Label>> requested;
    json invalid = json::array();
    for (const auto& [sid, v] : body["labels"].items()) {
      const auto label = v.is_string() ? data::parse_label(v.get<std::string>()) : std::nullopt;
      if (!label) {
        invalid.push_back(sid);
        continue;
      }
      requested.emplace_back(sid, *label);
    }
    if (!invalid.empty()) {
      http_fail(422, "invalid_label", "labels must be 'normal' or 'defect'",
                {{"sample_ids", std::move(invalid)}});
    }

    std::unique_lock lock(s.mu);
    json not_in_batch = json::array();
    json relabels = json::array();
    std::vector<std::pair<std::string, data::Label>> fresh;
    json duplicates = json::array();
    const bool awaiting = s.state == SessionState::AwaitingLabels && s.pending;
    for (const auto& [sid, label] : requested) {
      const auto prior = s.accepted.find(sid);
      if (prior != s.accepted.end()) {
        if (prior->second == label) {
          duplicates.push_back(sid);
        } else {
          relabels.push_back(sid);
        }
        continue;
      }
      const bool in_batch = awaiting && std::find(s.pending_ids.begin(), s.pending_ids.end(),
                                                  sid) != s.pending_ids.end();
      if (!in_batch) {
        not_in_batch.push_back(sid);
        continue;
      }
      fresh.emplace_back(sid, label);
    }
    if (!relabels.empty()) {
      http_fail(409, "relabel", "committed labels cannot be changed",
                {{"sample_ids", std::move(relabels)}, {"state", std::string(to_string(s.state))}});
    }
    if (!not_in_batch.empty()) {
      http_fail(409, awaiting ? "not_in_pending_batch" : "wrong_state",
                awaiting ? "labels are accepted only for the pending query batch"
                         : "session '" + s.id + "' is " + std::string(to_string(s.state)) +
                               ", no query is pending",
                {{"sample_ids", std::move(not_in_batch)},
                 {"state", std::string(to_string(s.state))}});
    }

    json accepted = json::array();
    for (const auto& [sid, label] : fresh) {
      try {
        s.dataset->commit_label(sid, label, annotator, s.pending->query_index);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Conflict) throw;
        const auto existing = s.dataset->committed_label(sid);
        if (existing != label) {
          persist(s);
          http_fail(409, "relabel", e.what(), {{"sample_ids", json::array({sid})}});
        }
      }
      s.partial.emplace(sid, label);
      s.accepted.emplace(sid, label);
      accepted.push_back(sid);
    }
    json remaining = json::array();
    if (awaiting) {
      for (const auto& sid : s.pending_ids) {
        if (!s.partial.count(sid)) remaining.push_back(sid);
      }
      if (remaining.empty()) s.state = SessionState::Training;
      persist(s);
      s.cv.notify_all();
    }
    return json{{"session_id", s.id},
                {"state", std::string(to_string(s.state))},
                {"query_index", s.pending ? json(s.pending->query_index) : json()},
                {"accepted", std::move(accepted)},
                {"duplicates", std::move(duplicates)},
                {"remaining", std::move(remaining)}};
  }

  json get_metrics(const Session& s, const httplib::Request& req) const {
    std::size_t since = 0;
    if (req.has_param("since")) {
      const auto v = req.get_param_value("since");
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), since);
      if (ec != std::errc() || ptr != v.data() + v.size()) {
        http_fail(400, "validation", "'since' must be a non-negative integer");
      }
    }
    std::shared_ptr<const std::vector<engine::MetricsRow>> rows;
    std::optional<engine::RunSummary> summary;
    SessionState state;
    {
      std::lock_guard lock(s.mu);
      rows = s.rows;
      summary = s.summary;
      state = s.state;
    }
    json out = json::array();
    for (std::size_t i = since; i < rows->size(); ++i) out.push_back(row_to_json((*rows)[i]));
    json j{{"session_id", s.id},
           {"state", std::string(to_string(state))},
           {"since", since},
           {"next", std::max(since, rows->size())},
           {"rows", std::move(out)},
           {"complete", state == SessionState::Complete}};
    if (summary) j["summary"] = json::parse(engine::summary_to_json(*summary));
    return j;
  }

  void get_image(const std::string& sample_id, const httplib::Request& req,
                 httplib::Response& res) const {
    std::shared_ptr<data::Dataset> dataset;
    std::optional<std::size_t> index;
    if (req.has_param("dataset")) {
      const auto did = req.get_param_value("dataset");
      dataset = datasets.get(did);
      if (!dataset) http_fail(404, "not_found", "unknown dataset '" + did + "'");
      index = dataset->find(sample_id);
    } else {
      std::vector<std::string> holders;
      for (const auto& ds : datasets.all()) {
        if (const auto i = ds->find(sample_id)) {
          if (!dataset) {
            dataset = ds;
            index = i;
          }
          holders.push_back(ds->id());
        }
      }
      if (holders.size() > 1) {
        http_fail(400, "validation", "sample id is ambiguous; pass ?dataset=",
                  {{"datasets", holders}});
      }
    }
    if (!dataset || !index) http_fail(404, "not_found", "unknown sample '" + sample_id + "'");
    const auto& sample = dataset->at(*index);
    if (!sample.image) {
      http_fail(409, "no_pixels", "sample '" + sample_id + "' carries only a feature vector");
    }
    const auto png = data::encode_png(*sample.image);
    res.status = 200;
    res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_problem(res, e);
      } catch (const Error& e) {
        send_problem(res, HttpError{status_for(e.code()), to_string(e.code()), e.what()});
      } catch (const json::exception& e) {
        send_problem(res, HttpError{400, "validation", e.what()});
      } catch (const std::exception& e) {
        send_problem(res, HttpError{500, "internal", e.what()});
      }
    };
  }

  void install_routes() {
    const std::size_t workers = std::max<std::size_t>(1, config.workers);
    server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };

    server.Post("/v1/datasets", guarded([this](const auto& req, auto& res) {
      const auto j = create_dataset(parse_body(req));
      send_json(res, j.at("created").template get<bool>() ? 201 : 200, j);
    }));
    server.Post("/v1/sessions", guarded([this](const auto& req, auto& res) {
      send_json(res, 201, create_session(parse_body(req)));
    }));
    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const auto& req, auto& res) {
      send_json(res, 200, session_view(*find_session(req.matches[1])));
    }));
    server.Get(R"(/v1/sessions/([^/]+)/query)", guarded([this](const auto& req, auto& res) {
      send_json(res, 200, get_query(*find_session(req.matches[1])));
    }));
    server.Post(R"(/v1/sessions/([^/]+)/labels)", guarded([this](const auto& req, auto& res) {
      auto s = find_session(req.matches[1]);
      send_json(res, 200, submit_labels(*s, parse_body(req)));
    }));
    server.Get(R"(/v1/sessions/([^/]+)/metrics)", guarded([this](const auto& req, auto& res) {
      send_json(res, 200, get_metrics(*find_session(req.matches[1]), req));
    }));
    server.Get(R"(/v1/samples/(.+)/image)", guarded([this](const auto& req, auto& res) {
      get_image(req.matches[1], req, res);
    }));
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404 ? "not_found" : "http_error";
      send_json(res, res.status,
                json{{"code", code},
                     {"message", "no handler for " + req.method + " " + req.path},
                     {"details", json::object()}});
    });
  }

  void stop_sessions() {
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(sessions_mu);
      for (const auto& [id, s] : sessions) all.push_back(s);
    }
    for (const auto& s : all) {
      {
        std::lock_guard lock(s->mu);
        s->stopping = true;
      }
      s->cv.notify_all();
    }
    for (const auto& s : all) {
      if (s->worker.joinable()) s->worker.join();
    }
  }
};

// ---------------------------------------------------------------------------

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
  if (impl_->bound_port >= 0) return impl_->bound_port;
  const auto& c = impl_->config;
  if (c.port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(c.host);
  } else if (impl_->server.bind_to_port(c.host, c.port)) {
    impl_->bound_port = c.port;
  }
  if (impl_->bound_port < 0) {
    fail(ErrorCode::Io, "cannot listen on " + c.host + ":" + std::to_string(c.port));
  }
  return impl_->bound_port;
}

void Service::run() {
  bind();
  impl_->server.listen_after_bind();
}

int Service::start() {
  const int p = bind();
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return p;
}

void Service::stop() {
  if (impl_->stopped.exchange(true)) return;
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
  impl_->stop_sessions();
}

int Service::port() const noexcept { return impl_->bound_port; }

const ServiceConfig& Service::config() const noexcept { return impl_->config; }

SessionState Service::wait_settled(std::string_view session_id, int timeout_ms) const {
  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(impl_->sessions_mu);
    const auto it = impl_->sessions.find(std::string(session_id));
    if (it == impl_->sessions.end()) {
      fail(ErrorCode::NotFound, "unknown session '" + std::string(session_id) + "'");
    }
    s = it->second;
  }
  std::unique_lock lock(s->mu);
  s->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return s->settled(); });
  return s->state;
}

}  // namespace alearn::service
