#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "learner.hpp"
#include "strategies.hpp"

namespace alearn::engine {

using strategies::SampleIndex;
using strategies::StrategyKind;

enum class RetrainPolicy { Continue, Reinit };
enum class OracleMode { Simulated, Human };
enum class ExtractorKind { FixedConv, RawDownsample, Precomputed, SampleFeatures };

inline constexpr double kStandardizedScale = 0.4;

struct ExperimentConfig {
  std::string name = "custom";
  std::size_t initial_n = 100;
  std::size_t queries = 20;
  std::size_t batch_n = 5;
  int epochs_per_query = 25;
  StrategyKind strategy = StrategyKind::LeastConfidence;
  std::uint64_t seed = 7;
  RetrainPolicy retrain_policy = RetrainPolicy::Continue;
  OracleMode oracle = OracleMode::Simulated;
  double oracle_noise = 0.0;

  // One third held out leaves 200 of 300 samples for initial + queried data.
  double test_fraction = 1.0 / 3.0;
  bool stratified_split = true;

  std::size_t hidden1 = learner::ClassifierHead::kDefaultHidden1;
  std::size_t hidden2 = learner::ClassifierHead::kDefaultHidden2;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t train_batch_size = 16;

  ExtractorKind extractor = ExtractorKind::FixedConv;
  std::string features_csv;        // Precomputed
  std::size_t downsample = 8;      // RawDownsample target edge
  // Rescale pooled features to zero mean and kStandardizedScale std using
  // statistics of the training split (labels are not used).
  bool standardize_features = true;

  void validate() const;
};

std::string_view to_string(RetrainPolicy policy) noexcept;
std::string_view to_string(OracleMode mode) noexcept;
std::string_view to_string(ExtractorKind kind) noexcept;

std::string config_to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys and bad values are
// validation errors.
ExperimentConfig config_from_json(std::string_view text);

std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name, std::uint64_t seed = 7);

// ---------------------------------------------------------------------------

enum class BatchStatus { Pending, Labeled };

struct QueryBatch {
  int query_index = 0;
  std::vector<SampleIndex> sample_ids;
  std::vector<double> scores;
  StrategyKind strategy = StrategyKind::LeastConfidence;
  BatchStatus status = BatchStatus::Pending;
};

struct PoolState {
  std::vector<SampleIndex> pool;   // ascending
  std::vector<SampleIndex> teach;  // in order of acquisition
  std::vector<SampleIndex> test;   // ascending
  std::vector<QueryBatch> history;
  std::map<SampleIndex, data::Label> labels;  // committed labels of teach
};

struct MetricsRow {
  int query_index = 0;
  int epoch = 0;
  double train_accuracy = 0;
  double train_loss = 0;
  double test_accuracy = 0;
  double test_loss = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsLog {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<MetricsRow> rows;

  std::optional<std::string> header_value(std::string_view key) const;
};

std::string format_metrics_csv(const MetricsLog& log);
MetricsLog parse_metrics_csv(std::string_view text);
MetricsLog read_metrics_csv(const std::filesystem::path& path);

struct TukeyResult {
  double q1 = 0;
  double q3 = 0;
  double lower_fence = 0;
  double upper_fence = 0;
  std::vector<double> kept;
  std::vector<double> removed;
};

// Quartiles by linear interpolation between order statistics
// (position (n - 1) * q), fences at 1.5 IQR.
double quantile_linear(std::span<const double> sorted, double q);
TukeyResult tukey_filter(std::span<const double> values);

inline constexpr std::string_view kOutlierRule = "tukey_1.5iqr_linear_quartiles";

struct RunSummary {
  int last_query_index = 0;
  std::size_t epochs = 0;
  double last_query_mean_accuracy = 0;
  double last_query_std = 0;  // population
  std::size_t outliers_removed = 0;
  std::string outlier_rule{kOutlierRule};
  double q1 = 0;
  double q3 = 0;
  double final_test_accuracy = 0;
  double final_test_loss = 0;
};

RunSummary last_query_summary(const MetricsLog& log);
std::string summary_to_json(const RunSummary& summary);

struct ComparisonRow {
  std::size_t cumulative_samples = 0;
  int query_a = 0;
  int query_b = 0;
  double test_accuracy_a = 0;
  double test_accuracy_b = 0;
  double first_epoch_accuracy_a = 0;
  double first_epoch_accuracy_b = 0;
};

// Aligns queries of two runs that have seen the same number of queried
// samples. With no explicit counts every shared count is used.
std::vector<ComparisonRow> compare_runs(const MetricsLog& a, const MetricsLog& b,
                                        std::span<const std::size_t> aligned_counts = {});
std::string format_comparison_csv(std::span<const ComparisonRow> rows);

// Ground-truth labels, each flipped with probability `noise` from a seeded stream.
std::vector<data::Label> simulated_oracle(const data::Dataset& dataset,
                                          std::span<const SampleIndex> ids, double noise,
                                          std::uint64_t seed);

std::unique_ptr<learner::FeatureExtractor> make_extractor(const ExperimentConfig& config,
                                                         const data::Dataset& dataset);

// ---------------------------------------------------------------------------

// Raised when a run stops early; carries the rows logged so far.
class RunAborted : public Error {
 public:
  RunAborted(ErrorCode code, const std::string& message, MetricsLog partial)
      : Error(code, message), partial_(std::move(partial)) {}
  const MetricsLog& partial() const noexcept { return partial_; }

 private:
  MetricsLog partial_;
};

// One pool-based active-learning run over a dataset. The dataset must outlive
// the run. A run is driven either by run_query_iteration (simulated oracle)
// or by select_query / apply_labels / train_current (external oracle).
class ActiveLearningRun {
 public:
  ActiveLearningRun(ExperimentConfig config, const data::Dataset& dataset);

  // Draws the initial teach set, builds the pool and trains query 0.
  void initialize();

  bool initialized() const noexcept { return initialized_; }
  bool finished() const noexcept;
  int completed_queries() const noexcept { return completed_queries_; }
  const QueryBatch* pending() const noexcept;

  // Scores the whole pool and records a pending batch.
  const QueryBatch& select_query();
  // Labels in the order of the pending batch's sample ids.
  void apply_labels(std::span<const data::Label> labels);
  // Teaches the classifier on the full teach set for epochs_per_query epochs.
  void train_current();

  QueryBatch run_query_iteration();

  std::vector<double> score_pool() const;

  // Replaces the classifier, e.g. to resume from a checkpoint.
  void set_head(learner::ClassifierHead head);

  const ExperimentConfig& config() const noexcept { return config_; }
  const data::Dataset& dataset() const noexcept { return *dataset_; }
  const PoolState& state() const noexcept { return state_; }
  const learner::ClassifierHead& head() const noexcept { return head_; }
  const MetricsLog& log() const noexcept { return log_; }
  std::span<const double> features(SampleIndex id) const { return features_.at(id); }
  std::vector<int> single_class_queries() const { return single_class_queries_; }

  std::string snapshot_json() const;
  static ActiveLearningRun restore(ExperimentConfig config, const data::Dataset& dataset,
                                   std::string_view snapshot);

 private:
  void train_query(int query_index);
  void refresh_header();

  ExperimentConfig config_;
  const data::Dataset* dataset_;
  std::string extractor_description_;
  std::vector<std::vector<double>> features_;
  std::vector<learner::Example> test_examples_;
  PoolState state_;
  learner::ClassifierHead head_;
  MetricsLog log_;
  std::vector<int> single_class_queries_;
  int completed_queries_ = 0;
  bool initialized_ = false;
};

struct ExperimentResult {
  MetricsLog log;
  RunSummary summary;
  PoolState state;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const data::Dataset& dataset);

}  // namespace alearn::engine
