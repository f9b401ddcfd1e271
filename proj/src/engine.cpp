#include "engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rng.hpp"

namespace alearn::engine {

using nlohmann::json;

namespace {

// Stream tags for mix_seed; each random decision of a run has its own stream.
constexpr std::uint64_t kSplitStream = 0x5917;
constexpr std::uint64_t kInitialDrawStream = 0x1417;
constexpr std::uint64_t kHeadStream = 0x4EAD;
constexpr std::uint64_t kTrainStream = 0x7EA0000;
constexpr std::uint64_t kRandomScoreStream = 0x5A3D000;
constexpr std::uint64_t kOracleStream = 0x0AC1000;

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(RetrainPolicy policy) noexcept {
  return policy == RetrainPolicy::Continue ? "continue" : "reinit";
}

std::string_view to_string(OracleMode mode) noexcept {
  return mode == OracleMode::Simulated ? "simulated" : "human";
}

std::string_view to_string(ExtractorKind kind) noexcept {
  switch (kind) {
    case ExtractorKind::FixedConv: return "fixed_conv";
    case ExtractorKind::RawDownsample: return "raw_downsample";
    case ExtractorKind::Precomputed: return "precomputed";
    case ExtractorKind::SampleFeatures: return "sample_features";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  const auto bad = [](const std::string& what) { fail(ErrorCode::Validation, what); };
  if (initial_n < 1) bad("initial_n must be >= 1");
  if (batch_n < 1) bad("batch_n must be >= 1");
  if (epochs_per_query < 1) bad("epochs_per_query must be >= 1");
  if (!(oracle_noise >= 0.0 && oracle_noise <= 1.0)) bad("oracle_noise must lie in [0, 1]");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) bad("test_fraction must lie in (0, 1)");
  if (hidden1 < 1 || hidden2 < 1) bad("hidden layer widths must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (train_batch_size < 1) bad("train_batch_size must be >= 1");
  if (extractor == ExtractorKind::Precomputed && features_csv.empty()) {
    bad("precomputed extractor needs features_csv");
  }
  if (extractor == ExtractorKind::RawDownsample && downsample < 1) bad("downsample must be >= 1");
}

std::string config_to_json(const ExperimentConfig& c) {
  json j{{"name", c.name},
         {"initial_n", c.initial_n},
         {"queries", c.queries},
         {"batch_n", c.batch_n},
         {"epochs_per_query", c.epochs_per_query},
         {"strategy", std::string(strategies::to_string(c.strategy))},
         {"seed", c.seed},
         {"retrain_policy", std::string(to_string(c.retrain_policy))},
         {"oracle", std::string(to_string(c.oracle))},
         {"oracle_noise", c.oracle_noise},
         {"test_fraction", c.test_fraction},
         {"stratified_split", c.stratified_split},
         {"hidden1", c.hidden1},
         {"hidden2", c.hidden2},
         {"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"train_batch_size", c.train_batch_size},
         {"extractor", std::string(to_string(c.extractor))},
         {"features_csv", c.features_csv},
         {"downsample", c.downsample},
         {"standardize_features", c.standardize_features}};
  return j.dump(2);
}

namespace {

template <typename T>
T get_field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::Validation, std::string("config field '") + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    fail(ErrorCode::Validation, std::string("config field '") + key +
                                    "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::Validation, "config must be a JSON object");

  ExperimentConfig c;
  if (j.contains("preset")) {
    const auto seed = j.contains("seed") ? get_field<std::uint64_t>(j, "seed") : c.seed;
    c = preset(get_field<std::string>(j, "preset"), seed);
  }
  for (const auto& [key, value] : j.items()) {
    const char* k = key.c_str();
    if (key == "preset") {
    } else if (key == "name") {
      c.name = get_field<std::string>(j, k);
    } else if (key == "initial_n") {
      c.initial_n = get_count(j, k);
    } else if (key == "queries") {
      c.queries = get_count(j, k);
    } else if (key == "batch_n") {
      c.batch_n = get_count(j, k);
    } else if (key == "epochs_per_query") {
      c.epochs_per_query = static_cast<int>(get_count(j, k));
    } else if (key == "strategy") {
      const auto s = strategies::parse_strategy(get_field<std::string>(j, k));
      if (!s) fail(ErrorCode::Validation, "unknown strategy '" + value.dump() + "'");
      c.strategy = *s;
    } else if (key == "seed") {
      c.seed = get_field<std::uint64_t>(j, k);
    } else if (key == "retrain_policy") {
      const auto s = get_field<std::string>(j, k);
      if (s == "continue") {
        c.retrain_policy = RetrainPolicy::Continue;
      } else if (s == "reinit") {
        c.retrain_policy = RetrainPolicy::Reinit;
      } else {
        fail(ErrorCode::Validation, "retrain_policy must be continue or reinit");
      }
    } else if (key == "oracle") {
      const auto s = get_field<std::string>(j, k);
      if (s == "simulated") {
        c.oracle = OracleMode::Simulated;
      } else if (s == "human") {
        c.oracle = OracleMode::Human;
      } else {
        fail(ErrorCode::Validation, "oracle must be simulated or human");
      }
    } else if (key == "oracle_noise") {
      c.oracle_noise = get_field<double>(j, k);
    } else if (key == "test_fraction") {
      c.test_fraction = get_field<double>(j, k);
    } else if (key == "stratified_split") {
      c.stratified_split = get_field<bool>(j, k);
    } else if (key == "hidden1") {
      c.hidden1 = get_count(j, k);
    } else if (key == "hidden2") {
      c.hidden2 = get_count(j, k);
    } else if (key == "learning_rate") {
      c.learning_rate = get_field<double>(j, k);
    } else if (key == "momentum") {
      c.momentum = get_field<double>(j, k);
    } else if (key == "train_batch_size") {
      c.train_batch_size = get_count(j, k);
    } else if (key == "extractor") {
      const auto s = get_field<std::string>(j, k);
      bool found = false;
      for (auto kind : {ExtractorKind::FixedConv, ExtractorKind::RawDownsample,
                        ExtractorKind::Precomputed, ExtractorKind::SampleFeatures}) {
        if (s == to_string(kind)) {
          c.extractor = kind;
          found = true;
        }
      }
      if (!found) fail(ErrorCode::Validation, "unknown extractor '" + s + "'");
    } else if (key == "features_csv") {
      c.features_csv = get_field<std::string>(j, k);
    } else if (key == "downsample") {
      c.downsample = get_count(j, k);
    } else if (key == "standardize_features") {
      c.standardize_features = get_field<bool>(j, k);
    } else {
      fail(ErrorCode::Validation, "unknown config field '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() {
  return {"expA-test1", "expA-test2", "expB-init20", "expB-init60", "expB-init100"};
}

ExperimentConfig preset(std::string_view name, std::uint64_t seed) {
  ExperimentConfig c;
  c.name = std::string(name);
  c.seed = seed;
  c.strategy = StrategyKind::LeastConfidence;
  c.epochs_per_query = 25;
  if (name == "expA-test1") {
    c.initial_n = 100;
    c.batch_n = 5;
    c.queries = 20;
  } else if (name == "expA-test2") {
    c.initial_n = 100;
    c.batch_n = 20;
    c.queries = 5;
  } else if (name == "expB-init20" || name == "expB-init60" || name == "expB-init100") {
    // 5 per query until 200 samples have been processed
    c.initial_n = name == "expB-init20" ? 20 : name == "expB-init60" ? 60 : 100;
    c.batch_n = 5;
    c.queries = (200 - c.initial_n) / c.batch_n;
  } else {
    fail(ErrorCode::Validation, "unknown preset '" + std::string(name) + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Metrics log

std::optional<std::string> MetricsLog::header_value(std::string_view key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return std::nullopt;
}

namespace {

constexpr std::string_view kMetricsColumns =
    "query_index,epoch,train_accuracy,train_loss,test_accuracy,test_loss";

}  // namespace

std::string format_metrics_csv(const MetricsLog& log) {
  std::string out;
  for (const auto& [k, v] : log.header) out += "# " + k + "=" + v + "\n";
  out += kMetricsColumns;
  out += '\n';
  for (const auto& r : log.rows) {
    out += std::to_string(r.query_index) + "," + std::to_string(r.epoch) + "," +
           format_double(r.train_accuracy) + "," + format_double(r.train_loss) + "," +
           format_double(r.test_accuracy) + "," + format_double(r.test_loss) + "\n";
  }
  return out;
}

MetricsLog parse_metrics_csv(std::string_view text) {
  MetricsLog log;
  bool seen_columns = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto where = [&] { return "metrics line " + std::to_string(line_no) + ": "; };

    if (line.front() == '#') {
      if (seen_columns) fail(ErrorCode::Data, where() + "header comment after column row");
      line.remove_prefix(1);
      while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) fail(ErrorCode::Data, where() + "expected key=value");
      log.header.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
      continue;
    }
    if (!seen_columns) {
      if (line != kMetricsColumns) fail(ErrorCode::Data, where() + "unexpected column header");
      seen_columns = true;
      continue;
    }

    MetricsRow row;
    std::string_view cells[6];
    std::size_t n = 0;
    std::size_t start = 0;
    while (n < 6) {
      const auto comma = line.find(',', start);
      cells[n++] = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                       : comma - start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (n != 6 || line.find(',', start) != std::string_view::npos) {
      fail(ErrorCode::Data, where() + "expected 6 columns");
    }
    const auto parse_int = [&](std::string_view cell, int& out) {
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        fail(ErrorCode::Data, where() + "bad integer '" + std::string(cell) + "'");
      }
    };
    const auto parse_real = [&](std::string_view cell, double& out) {
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        fail(ErrorCode::Data, where() + "bad number '" + std::string(cell) + "'");
      }
    };
    parse_int(cells[0], row.query_index);
    parse_int(cells[1], row.epoch);
    parse_real(cells[2], row.train_accuracy);
    parse_real(cells[3], row.train_loss);
    parse_real(cells[4], row.test_accuracy);
    parse_real(cells[5], row.test_loss);
    if (!log.rows.empty()) {
      const auto& prev = log.rows.back();
      if (std::pair(row.query_index, row.epoch) <= std::pair(prev.query_index, prev.epoch)) {
        fail(ErrorCode::Data, where() + "rows not ordered by (query_index, epoch)");
      }
    }
    log.rows.push_back(row);
  }
  if (!seen_columns) fail(ErrorCode::Data, "metrics file has no column header");
  return log;
}

MetricsLog read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open metrics log " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_metrics_csv(buffer.str());
}

// ---------------------------------------------------------------------------
// Statistics

double quantile_linear(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorCode::InvalidArgument, "quantile of an empty series");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

TukeyResult tukey_filter(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  TukeyResult r;
  r.q1 = quantile_linear(sorted, 0.25);
  r.q3 = quantile_linear(sorted, 0.75);
  const double iqr = r.q3 - r.q1;
  r.lower_fence = r.q1 - 1.5 * iqr;
  r.upper_fence = r.q3 + 1.5 * iqr;
  for (double v : sorted) {
    (v < r.lower_fence || v > r.upper_fence ? r.removed : r.kept).push_back(v);
  }
  // the quartiles themselves always lie inside the fences
  if (r.kept.empty()) fail(ErrorCode::Internal, "Tukey filter removed every point");
  return r;
}

RunSummary last_query_summary(const MetricsLog& log) {
  if (log.rows.empty()) fail(ErrorCode::Data, "metrics log has no rows");
  const int last = log.rows.back().query_index;

  if (const auto queries = log.header_value("queries")) {
    const int expected = std::stoi(*queries);
    if (last < expected) {
      fail(ErrorCode::Data, "metrics log is missing final query " + std::to_string(expected) +
                                " (last logged query is " + std::to_string(last) + ")");
    }
  }
  std::vector<double> accuracies;
  const MetricsRow* final_row = nullptr;
  for (const auto& r : log.rows) {
    if (r.query_index != last) continue;
    accuracies.push_back(r.test_accuracy);
    if (!final_row || r.epoch > final_row->epoch) final_row = &r;
  }
  if (const auto epochs = log.header_value("epochs_per_query")) {
    const auto expected = static_cast<std::size_t>(std::stoul(*epochs));
    if (accuracies.size() < expected) {
      fail(ErrorCode::Data, "final query " + std::to_string(last) + " is incomplete: " +
                                std::to_string(accuracies.size()) + " of " +
                                std::to_string(expected) + " epochs logged");
    }
  }

  const auto tukey = tukey_filter(accuracies);
  // Sorted and shifted by the minimum: order-independent, exact for constant series.
  auto kept = tukey.kept;
  std::sort(kept.begin(), kept.end());
  const double n = static_cast<double>(kept.size());
  const double ref = kept.front();
  double shifted = 0.0;
  for (double v : kept) shifted += v - ref;
  const double mean = ref + shifted / n;
  double ss = 0.0;
  for (double v : kept) ss += (v - mean) * (v - mean);

  RunSummary s;
  s.last_query_index = last;
  s.epochs = accuracies.size();
  s.last_query_mean_accuracy = mean;
  s.last_query_std = std::sqrt(ss / n);
  s.outliers_removed = tukey.removed.size();
  s.q1 = tukey.q1;
  s.q3 = tukey.q3;
  s.final_test_accuracy = final_row->test_accuracy;
  s.final_test_loss = final_row->test_loss;
  return s;
}

std::string summary_to_json(const RunSummary& s) {
  json j{{"last_query_index", s.last_query_index},
         {"epochs", s.epochs},
         {"last_query_mean_accuracy", s.last_query_mean_accuracy},
         {"last_query_std", s.last_query_std},
         {"std_kind", "population"},
         {"outliers_removed", s.outliers_removed},
         {"outlier_rule", s.outlier_rule},
         {"q1", s.q1},
         {"q3", s.q3},
         {"final_test_accuracy", s.final_test_accuracy},
         {"final_test_loss", s.final_test_loss}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

struct RunShape {
  std::size_t initial_n;
  std::size_t batch_n;
  std::size_t queries;
};

RunShape shape_of(const MetricsLog& log, const char* which) {
  const auto get = [&](const char* key) {
    const auto v = log.header_value(key);
    if (!v) {
      fail(ErrorCode::Validation, std::string("log ") + which + " lacks header key " + key);
    }
    return static_cast<std::size_t>(std::stoull(*v));
  };
  RunShape s{get("initial_n"), get("batch_n"), get("queries")};
  const int last = log.rows.empty() ? -1 : log.rows.back().query_index;
  if (last < static_cast<int>(s.queries)) {
    fail(ErrorCode::Validation, std::string("log ") + which + " is incomplete (ends at query " +
                                    std::to_string(last) + " of " + std::to_string(s.queries) +
                                    ")");
  }
  return s;
}

std::pair<double, double> first_and_last_accuracy(const MetricsLog& log, int query) {
  const MetricsRow* first = nullptr;
  const MetricsRow* last = nullptr;
  for (const auto& r : log.rows) {
    if (r.query_index != query) continue;
    if (!first || r.epoch < first->epoch) first = &r;
    if (!last || r.epoch > last->epoch) last = &r;
  }
  if (!first) fail(ErrorCode::Data, "no rows for query " + std::to_string(query));
  return {first->test_accuracy, last->test_accuracy};
}

}  // namespace

std::vector<ComparisonRow> compare_runs(const MetricsLog& a, const MetricsLog& b,
                                        std::span<const std::size_t> aligned_counts) {
  const auto sa = shape_of(a, "a");
  const auto sb = shape_of(b, "b");
  if (sa.initial_n != sb.initial_n) {
    fail(ErrorCode::Validation, "runs start from different initial sizes (" +
                                    std::to_string(sa.initial_n) + " vs " +
                                    std::to_string(sb.initial_n) + ")");
  }
  if (sa.batch_n * sa.queries != sb.batch_n * sb.queries) {
    fail(ErrorCode::Validation, "runs query different totals (" +
                                    std::to_string(sa.batch_n * sa.queries) + " vs " +
                                    std::to_string(sb.batch_n * sb.queries) + ")");
  }

  std::vector<std::size_t> counts(aligned_counts.begin(), aligned_counts.end());
  if (counts.empty()) {
    for (std::size_t q = 1; q <= sa.queries; ++q) {
      const std::size_t total = q * sa.batch_n;
      if (total % sb.batch_n == 0 && total / sb.batch_n <= sb.queries) counts.push_back(total);
    }
  }
  std::vector<ComparisonRow> rows;
  for (std::size_t total : counts) {
    if (total == 0 || total % sa.batch_n != 0 || total % sb.batch_n != 0 ||
        total / sa.batch_n > sa.queries || total / sb.batch_n > sb.queries) {
      fail(ErrorCode::Validation, "cumulative count " + std::to_string(total) +
                                      " is not reached by both runs");
    }
    ComparisonRow row;
    row.cumulative_samples = total;
    row.query_a = static_cast<int>(total / sa.batch_n);
    row.query_b = static_cast<int>(total / sb.batch_n);
    std::tie(row.first_epoch_accuracy_a, row.test_accuracy_a) =
        first_and_last_accuracy(a, row.query_a);
    std::tie(row.first_epoch_accuracy_b, row.test_accuracy_b) =
        first_and_last_accuracy(b, row.query_b);
    rows.push_back(row);
  }
  return rows;
}

std::string format_comparison_csv(std::span<const ComparisonRow> rows) {
  std::string out =
      "cumulative_samples,query_a,query_b,test_accuracy_a,test_accuracy_b,delta,"
      "first_epoch_accuracy_a,first_epoch_accuracy_b,first_epoch_delta\n";
  for (const auto& r : rows) {
    out += std::to_string(r.cumulative_samples) + "," + std::to_string(r.query_a) + "," +
           std::to_string(r.query_b) + "," + format_double(r.test_accuracy_a) + "," +
           format_double(r.test_accuracy_b) + "," +
           format_double(r.test_accuracy_a - r.test_accuracy_b) + "," +
           format_double(r.first_epoch_accuracy_a) + "," +
           format_double(r.first_epoch_accuracy_b) + "," +
           format_double(r.first_epoch_accuracy_a - r.first_epoch_accuracy_b) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle and extractor

std::vector<data::Label> simulated_oracle(const data::Dataset& dataset,
                                          std::span<const SampleIndex> ids, double noise,
                                          std::uint64_t seed) {
  if (!(noise >= 0.0 && noise <= 1.0)) fail(ErrorCode::Validation, "noise must lie in [0, 1]");
  Rng rng(seed);
  std::vector<data::Label> labels;
  labels.reserve(ids.size());
  for (const auto id : ids) {
    if (id >= dataset.size()) fail(ErrorCode::NotFound, "sample index out of range");
    const auto& gt = dataset.at(id).ground_truth;
    if (!gt) fail(ErrorCode::Data, "sample '" + dataset.at(id).id + "' has no ground truth");
    // one draw per id keeps the flip mask independent of the noise level
    const bool flip = rng.uniform() < noise;
    labels.push_back(flip ? data::flip(*gt) : *gt);
  }
  return labels;
}

std::unique_ptr<learner::FeatureExtractor> make_extractor(const ExperimentConfig& config,
                                                         const data::Dataset& dataset) {
  switch (config.extractor) {
    case ExtractorKind::FixedConv:
      return std::make_unique<learner::FixedConvExtractor>();
    case ExtractorKind::RawDownsample:
      return std::make_unique<learner::RawDownsampleExtractor>(config.downsample,
                                                               config.downsample);
    case ExtractorKind::Precomputed:
      return std::make_unique<learner::PrecomputedExtractor>(
          learner::load_feature_csv(config.features_csv));
    case ExtractorKind::SampleFeatures: {
      if (dataset.size() == 0 || !dataset.at(0).features) {
        fail(ErrorCode::Configuration, "dataset samples carry no feature vectors");
      }
      return std::make_unique<learner::SampleFeaturesExtractor>(dataset.at(0).features->size());
    }
  }
  fail(ErrorCode::Internal, "unhandled extractor kind");
}

// ---------------------------------------------------------------------------
// Run

ActiveLearningRun::ActiveLearningRun(ExperimentConfig config, const data::Dataset& dataset)
    : config_(std::move(config)), dataset_(&dataset) {
  config_.validate();

  const auto extractor = make_extractor(config_, dataset);
  extractor_description_ = extractor->describe();
  features_.reserve(dataset.size());
  for (const auto& s : dataset.samples()) {
    features_.push_back(learner::extract_features(*extractor, s));
  }

  const auto parts = data::split(dataset, config_.test_fraction,
                                 mix_seed(config_.seed, kSplitStream), config_.stratified_split);
  state_.test.assign(parts.test.begin(), parts.test.end());
  state_.pool.assign(parts.train.begin(), parts.train.end());
  if (config_.standardize_features) {
    std::vector<std::vector<double>> train_rows;
    train_rows.reserve(parts.train.size());
    for (const auto id : parts.train) train_rows.push_back(features_[id]);
    const auto scaler = learner::FeatureScaler::fit(train_rows, kStandardizedScale);
    for (auto& row : features_) scaler.apply(row);
  }

  const std::size_t needed = config_.initial_n + config_.queries * config_.batch_n;
  if (needed > parts.train.size()) {
    fail(ErrorCode::Configuration,
         "initial_n + queries * batch_n = " + std::to_string(needed) + " exceeds the " +
             std::to_string(parts.train.size()) + " training samples");
  }
  for (const auto id : state_.test) {
    const auto& gt = dataset.at(id).ground_truth;
    if (!gt) fail(ErrorCode::Data, "test sample '" + dataset.at(id).id + "' has no ground truth");
    test_examples_.push_back({features_[id], data::label_value(*gt)});
  }
  if (config_.oracle == OracleMode::Simulated) {
    for (const auto id : state_.pool) {
      if (!dataset.at(id).ground_truth) {
        fail(ErrorCode::Data, "simulated oracle needs ground truth for '" + dataset.at(id).id +
                                  "'");
      }
    }
  }
  refresh_header();
}

void ActiveLearningRun::refresh_header() {
  const auto& c = config_;
  std::string single_class;
  for (int q : single_class_queries_) {
    if (!single_class.empty()) single_class += ';';
    single_class += std::to_string(q);
  }
  log_.header = {
      {"format", "alearn-metrics"},
      {"version", "1"},
      {"name", c.name},
      {"dataset_id", dataset_->id()},
      {"dataset_digest", dataset_->manifest().digest},
      {"initial_n", std::to_string(c.initial_n)},
      {"queries", std::to_string(c.queries)},
      {"batch_n", std::to_string(c.batch_n)},
      {"epochs_per_query", std::to_string(c.epochs_per_query)},
      {"strategy", std::string(strategies::to_string(c.strategy))},
      {"seed", std::to_string(c.seed)},
      {"retrain_policy", std::string(to_string(c.retrain_policy))},
      {"oracle", std::string(to_string(c.oracle))},
      {"oracle_noise", format_double(c.oracle_noise)},
      {"test_fraction", format_double(c.test_fraction)},
      {"stratified_split", c.stratified_split ? "true" : "false"},
      {"train_size", std::to_string(state_.pool.size() + state_.teach.size())},
      {"test_size", std::to_string(state_.test.size())},
      {"extractor", extractor_description_},
      {"standardize_features", c.standardize_features ? "true" : "false"},
      {"feature_channels", std::to_string(features_.empty() ? 0 : features_.front().size())},
      {"hidden1", std::to_string(c.hidden1)},
      {"hidden2", std::to_string(c.hidden2)},
      {"optimizer", c.momentum > 0.0 ? "sgd_momentum" : "sgd"},
      {"learning_rate", format_double(c.learning_rate)},
      {"momentum", format_double(c.momentum)},
      {"train_batch_size", std::to_string(c.train_batch_size)},
      {"weight_init", "glorot_uniform"},
      {"loss", "binary_cross_entropy"},
      {"decision_threshold", "0.5"},
      {"single_class_queries", single_class.empty() ? "none" : single_class},
  };
}

void ActiveLearningRun::initialize() {
  if (initialized_) fail(ErrorCode::Conflict, "run already initialized");

  std::vector<SampleIndex> candidates;
  for (const auto id : state_.pool) {
    if (dataset_->at(id).ground_truth) candidates.push_back(id);
  }
  if (candidates.size() < config_.initial_n) {
    fail(ErrorCode::Configuration, "only " + std::to_string(candidates.size()) +
                                       " labeled training samples for initial_n = " +
                                       std::to_string(config_.initial_n));
  }
  Rng rng(mix_seed(config_.seed, kInitialDrawStream));
  rng.shuffle(std::span<SampleIndex>(candidates));
  candidates.resize(config_.initial_n);

  for (const auto id : candidates) {
    state_.teach.push_back(id);
    state_.labels.emplace(id, *dataset_->at(id).ground_truth);
  }
  std::vector<SampleIndex> chosen = candidates;
  std::sort(chosen.begin(), chosen.end());
  std::vector<SampleIndex> rest;
  std::set_difference(state_.pool.begin(), state_.pool.end(), chosen.begin(), chosen.end(),
                      std::back_inserter(rest));
  state_.pool = std::move(rest);

  head_ = learner::ClassifierHead::initialized(features_.front().size(), config_.hidden1,
                                               config_.hidden2,
                                               mix_seed(config_.seed, kHeadStream));
  initialized_ = true;
  train_query(0);
}

bool ActiveLearningRun::finished() const noexcept {
  return initialized_ && completed_queries_ >= static_cast<int>(config_.queries);
}

const QueryBatch* ActiveLearningRun::pending() const noexcept {
  if (state_.history.empty() || state_.history.back().status != BatchStatus::Pending) {
    return nullptr;
  }
  return &state_.history.back();
}

std::vector<double> ActiveLearningRun::score_pool() const {
  std::vector<double> scores;
  scores.reserve(state_.pool.size());
  if (config_.strategy == StrategyKind::Random) {
    Rng rng(mix_seed(config_.seed, kRandomScoreStream + static_cast<std::uint64_t>(
                                                            completed_queries_ + 1)));
    for (std::size_t i = 0; i < state_.pool.size(); ++i) scores.push_back(rng.uniform());
    return scores;
  }
  for (const auto id : state_.pool) {
    const auto probs = strategies::binary_prob_vector(head_.forward(features_[id]));
    scores.push_back(strategies::score(config_.strategy, probs));
  }
  return scores;
}

const QueryBatch& ActiveLearningRun::select_query() {
  if (!initialized_) fail(ErrorCode::Conflict, "run not initialized");
  if (pending()) fail(ErrorCode::Conflict, "previous query batch is still pending");
  if (finished()) fail(ErrorCode::Conflict, "run already completed all queries");
  if (state_.history.size() != static_cast<std::size_t>(completed_queries_)) {
    fail(ErrorCode::Conflict, "labeled batch has not been trained on yet");
  }
  if (state_.pool.size() < config_.batch_n) {
    fail(ErrorCode::InsufficientPool, "pool exhausted: " + std::to_string(state_.pool.size()) +
                                          " samples left for a batch of " +
                                          std::to_string(config_.batch_n));
  }

  const auto scores = score_pool();
  std::vector<strategies::ScoredSample> scored;
  scored.reserve(scores.size());
  std::map<SampleIndex, double> by_id;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scored.push_back({state_.pool[i], scores[i]});
    by_id.emplace(state_.pool[i], scores[i]);
  }

  QueryBatch batch;
  batch.query_index = completed_queries_ + 1;
  batch.strategy = config_.strategy;
  batch.sample_ids = strategies::select_batch(scored, config_.batch_n);
  for (const auto id : batch.sample_ids) batch.scores.push_back(by_id.at(id));
  state_.history.push_back(std::move(batch));
  return state_.history.back();
}

void ActiveLearningRun::apply_labels(std::span<const data::Label> labels) {
  if (!pending()) fail(ErrorCode::Conflict, "no pending query batch");
  auto& batch = state_.history.back();
  if (labels.size() != batch.sample_ids.size()) {
    fail(ErrorCode::InvalidArgument, "expected " + std::to_string(batch.sample_ids.size()) +
                                         " labels, got " + std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto id = batch.sample_ids[i];
    const auto it = std::lower_bound(state_.pool.begin(), state_.pool.end(), id);
    if (it == state_.pool.end() || *it != id) {
      fail(ErrorCode::Internal, "queried sample left the pool early");
    }
    state_.pool.erase(it);
    state_.teach.push_back(id);
    state_.labels.emplace(id, labels[i]);
  }
  batch.status = BatchStatus::Labeled;
}

void ActiveLearningRun::train_current() {
  if (state_.history.empty() || state_.history.back().status != BatchStatus::Labeled ||
      state_.history.back().query_index != completed_queries_ + 1) {
    fail(ErrorCode::Conflict, "no labeled batch waiting to be trained on");
  }
  train_query(completed_queries_ + 1);
  ++completed_queries_;
}

void ActiveLearningRun::train_query(int query_index) {
  if (config_.retrain_policy == RetrainPolicy::Reinit && query_index > 0) {
    head_ = learner::ClassifierHead::initialized(features_.front().size(), config_.hidden1,
                                                 config_.hidden2,
                                                 mix_seed(config_.seed, kHeadStream));
  }
  std::vector<learner::Example> examples;
  examples.reserve(state_.teach.size());
  for (const auto id : state_.teach) {
    examples.push_back({features_[id], data::label_value(state_.labels.at(id))});
  }

  learner::TrainConfig tc;
  tc.epochs = config_.epochs_per_query;
  tc.learning_rate = config_.learning_rate;
  tc.batch_size = config_.train_batch_size;
  tc.momentum = config_.momentum;
  tc.optimizer = config_.momentum > 0.0 ? learner::Optimizer::SgdMomentum
                                        : learner::Optimizer::Sgd;
  tc.seed = mix_seed(config_.seed, kTrainStream + static_cast<std::uint64_t>(query_index));

  const auto report = learner::train(head_, examples, tc,
                                     [&](int epoch, const learner::EvalResult& train) {
                                       const auto test =
                                           learner::evaluate_examples(head_, test_examples_);
                                       log_.rows.push_back({query_index, epoch, train.accuracy,
                                                            train.loss, test.accuracy,
                                                            test.loss});
                                     });
  if (report.single_class) {
    single_class_queries_.push_back(query_index);
    refresh_header();
  }
}

QueryBatch ActiveLearningRun::run_query_iteration() {
  const auto& batch = select_query();
  const auto labels =
      simulated_oracle(*dataset_, batch.sample_ids, config_.oracle_noise,
                       mix_seed(config_.seed, kOracleStream + static_cast<std::uint64_t>(
                                                                  batch.query_index)));
  apply_labels(labels);
  train_current();
  return state_.history.back();
}

void ActiveLearningRun::set_head(learner::ClassifierHead head) {
  if (head.inputs() != features_.front().size()) {
    fail(ErrorCode::Configuration, "head input width does not match the features");
  }
  head_ = std::move(head);
}

std::string ActiveLearningRun::snapshot_json() const {
  json history = json::array();
  for (const auto& b : state_.history) {
    history.push_back({{"query_index", b.query_index},
                       {"sample_ids", b.sample_ids},
                       {"scores", b.scores},
                       {"strategy", std::string(strategies::to_string(b.strategy))},
                       {"status", b.status == BatchStatus::Pending ? "pending" : "labeled"}});
  }
  json labels = json::array();
  for (const auto id : state_.teach) {
    labels.push_back(std::string(data::to_string(state_.labels.at(id))));
  }
  json rows = json::array();
  for (const auto& r : log_.rows) {
    rows.push_back({r.query_index, r.epoch, r.train_accuracy, r.train_loss, r.test_accuracy,
                    r.test_loss});
  }
  json j{{"version", 1},
         {"initialized", initialized_},
         {"completed_queries", completed_queries_},
         {"pool", state_.pool},
         {"teach", state_.teach},
         {"teach_labels", std::move(labels)},
         {"test", state_.test},
         {"history", std::move(history)},
         {"rows", std::move(rows)},
         {"single_class_queries", single_class_queries_}};
  if (initialized_) j["head"] = learner::head_to_json(head_);
  return j.dump();
}

ActiveLearningRun ActiveLearningRun::restore(ExperimentConfig config,
                                             const data::Dataset& dataset,
                                             std::string_view snapshot) {
  ActiveLearningRun run(std::move(config), dataset);
  try {
    const auto j = json::parse(snapshot);
    if (j.at("version") != 1) fail(ErrorCode::Data, "unsupported run snapshot version");
    if (j.at("test").get<std::vector<SampleIndex>>() != run.state_.test) {
      fail(ErrorCode::Data, "snapshot test split does not match the dataset");
    }
    run.initialized_ = j.at("initialized").get<bool>();
    run.completed_queries_ = j.at("completed_queries").get<int>();
    run.state_.pool = j.at("pool").get<std::vector<SampleIndex>>();
    run.state_.teach = j.at("teach").get<std::vector<SampleIndex>>();
    const auto labels = j.at("teach_labels").get<std::vector<std::string>>();
    if (labels.size() != run.state_.teach.size()) fail(ErrorCode::Data, "snapshot label count");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto label = data::parse_label(labels[i]);
      if (!label) fail(ErrorCode::Data, "snapshot holds an unknown label");
      run.state_.labels.emplace(run.state_.teach[i], *label);
    }
    for (const auto& b : j.at("history")) {
      QueryBatch batch;
      batch.query_index = b.at("query_index").get<int>();
      batch.sample_ids = b.at("sample_ids").get<std::vector<SampleIndex>>();
      batch.scores = b.at("scores").get<std::vector<double>>();
      batch.strategy = strategies::parse_strategy(b.at("strategy").get<std::string>())
                           .value_or(StrategyKind::LeastConfidence);
      batch.status = b.at("status") == "pending" ? BatchStatus::Pending : BatchStatus::Labeled;
      run.state_.history.push_back(std::move(batch));
    }
    for (const auto& r : j.at("rows")) {
      run.log_.rows.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<double>(),
                               r.at(3).get<double>(), r.at(4).get<double>(),
                               r.at(5).get<double>()});
    }
    run.single_class_queries_ = j.at("single_class_queries").get<std::vector<int>>();
    if (run.initialized_) run.head_ = learner::head_from_json(j.at("head").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::Data, std::string("bad run snapshot: ") + e.what());
  }
  run.refresh_header();
  return run;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const data::Dataset& dataset) {
  if (config.oracle != OracleMode::Simulated) {
    fail(ErrorCode::Configuration, "batch experiments need the simulated oracle");
  }
  ActiveLearningRun run(config, dataset);
  try {
    run.initialize();
    while (!run.finished()) run.run_query_iteration();
  } catch (const Error& e) {
    throw RunAborted(e.code(), e.what(), run.log());
  }
  ExperimentResult result{run.log(), last_query_summary(run.log()), run.state()};
  return result;
}

}  // namespace alearn::engine
