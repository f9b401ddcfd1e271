#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "data.hpp"
#include "engine.hpp"
#include "error.hpp"

using namespace alearn;
using namespace alearn::engine;

namespace fs = std::filesystem;

namespace {

const data::Dataset& synthetic300() {
  static const data::Dataset ds = data::generate_synthetic(data::SynthParams{}, 300);
  return ds;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("alearn_engine_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 60 feature-only samples whose single feature is i + 1.
data::Dataset scalar_feature_dataset() {
  const auto dir = temp_dir("scalar");
  {
    std::ofstream f(dir / "f.csv");
    std::ofstream l(dir / "l.csv");
    f << "sample_id,f0\n";
    l << "sample_id,label\n";
    for (int i = 0; i < 60; ++i) {
      f << "s" << i << "," << (i + 1) << "\n";
      l << "s" << i << "," << (i % 2 ? "defect" : "normal") << "\n";
    }
  }
  return data::ingest_features(dir / "f.csv", dir / "l.csv");
}

ExperimentConfig scalar_config() {
  ExperimentConfig c;
  c.extractor = ExtractorKind::SampleFeatures;
  c.standardize_features = false;
  c.initial_n = 10;
  c.queries = 3;
  c.batch_n = 3;
  c.epochs_per_query = 2;
  c.test_fraction = 0.5;
  return c;
}

MetricsLog log_with_last_query(const std::vector<double>& accuracies) {
  MetricsLog log;
  log.header = {{"queries", "1"}, {"epochs_per_query", std::to_string(accuracies.size())}};
  log.rows.push_back({0, 1, 0.5, 0.7, 0.5, 0.7});
  for (std::size_t i = 0; i < accuracies.size(); ++i) {
    log.rows.push_back({1, static_cast<int>(i + 1), 0.9, 0.2, accuracies[i], 0.3});
  }
  return log;
}

void check_bookkeeping(const ActiveLearningRun& run, std::size_t train_size) {
  const auto& st = run.state();
  std::set<SampleIndex> pool(st.pool.begin(), st.pool.end());
  std::set<SampleIndex> teach(st.teach.begin(), st.teach.end());
  std::set<SampleIndex> test(st.test.begin(), st.test.end());
  ASSERT_EQ(pool.size(), st.pool.size());
  ASSERT_EQ(teach.size(), st.teach.size());
  for (auto id : teach) {
    ASSERT_EQ(pool.count(id), 0u);
    ASSERT_EQ(test.count(id), 0u);
    ASSERT_EQ(st.labels.count(id), 1u);
  }
  for (auto id : pool) ASSERT_EQ(test.count(id), 0u);
  ASSERT_EQ(st.pool.size() + st.teach.size(), train_size);
  ASSERT_EQ(st.labels.size(), st.teach.size());
  ASSERT_TRUE(std::is_sorted(st.pool.begin(), st.pool.end()));
  std::set<SampleIndex> queried;
  for (const auto& b : st.history) {
    for (auto id : b.sample_ids) ASSERT_TRUE(queried.insert(id).second) << "id queried twice";
  }
}

}  // namespace

TEST(Presets, ShapesAndNames) {
  EXPECT_EQ(preset_names().size(), 5u);
  const auto a1 = preset("expA-test1");
  EXPECT_EQ(a1.initial_n, 100u);
  EXPECT_EQ(a1.batch_n, 5u);
  EXPECT_EQ(a1.queries, 20u);
  EXPECT_EQ(a1.epochs_per_query, 25);
  const auto a2 = preset("expA-test2");
  EXPECT_EQ(a2.batch_n, 20u);
  EXPECT_EQ(a2.queries, 5u);
  for (std::size_t init : {20u, 60u, 100u}) {
    const auto b = preset("expB-init" + std::to_string(init));
    EXPECT_EQ(b.initial_n, init);
    EXPECT_EQ(b.batch_n, 5u);
    EXPECT_EQ(b.initial_n + b.queries * b.batch_n, 200u);
  }
  EXPECT_EQ(preset("expB-init20").queries, 36u);
  EXPECT_EQ(preset("expA-test1", 3).seed, 3u);
  EXPECT_EQ(code_of([] { preset("expC"); }), ErrorCode::Validation);
}

TEST(Config, JsonRoundTripAndStrictness) {
  auto c = preset("expB-init60", 11);
  c.retrain_policy = RetrainPolicy::Reinit;
  c.oracle_noise = 0.1;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_from_json("{}").initial_n, 100u);
  EXPECT_EQ(code_of([] { config_from_json(R"({"batch_n": 0})"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json(R"({"batchn": 5})"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json(R"({"batch_n": "5"})"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json(R"({"strategy": "qbc"})"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json(R"({"oracle": "robot"})"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json(R"({"epochs_per_query": 0})"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json("[]"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { config_from_json("{"); }), ErrorCode::Validation);
}

TEST(Run, ExperimentAPresetOneProducesAllRows) {
  const auto result = run_experiment(preset("expA-test1", 7), synthetic300());
  ASSERT_EQ(result.log.rows.size(), 21u * 25u);
  for (std::size_t i = 0; i < result.log.rows.size(); ++i) {
    EXPECT_EQ(result.log.rows[i].query_index, static_cast<int>(i / 25));
    EXPECT_EQ(result.log.rows[i].epoch, static_cast<int>(i % 25 + 1));
  }
  EXPECT_EQ(result.state.teach.size(), 200u);
  EXPECT_TRUE(result.state.pool.empty());
  EXPECT_EQ(result.summary.last_query_index, 20);
  EXPECT_EQ(result.summary.epochs, 25u);
  EXPECT_EQ(result.log.header_value("epochs_per_query"), "25");
  EXPECT_EQ(result.log.header_value("optimizer"), "sgd_momentum");
}

TEST(Run, ExperimentAPresetTwoAndExperimentB) {
  EXPECT_EQ(run_experiment(preset("expA-test2", 7), synthetic300()).log.rows.size(), 6u * 25u);
  auto b = preset("expB-init20", 7);
  b.epochs_per_query = 1;
  const auto r = run_experiment(b, synthetic300());
  EXPECT_EQ(r.log.rows.back().query_index, 36);
  EXPECT_EQ(r.state.history.size(), 36u);
  for (const auto& batch : r.state.history) EXPECT_EQ(batch.sample_ids.size(), 5u);
}

TEST(Run, InitialDrawSizesAndDeterminism) {
  const auto& ds = synthetic300();
  ActiveLearningRun run(preset("expA-test1", 7), ds);
  run.initialize();
  EXPECT_EQ(run.state().teach.size(), 100u);
  EXPECT_EQ(run.state().pool.size(), 100u);
  EXPECT_EQ(run.state().test.size(), 100u);
  ActiveLearningRun again(preset("expA-test1", 7), ds);
  again.initialize();
  EXPECT_EQ(run.state().teach, again.state().teach);
  // both experiment A tests share the initial draw for a seed
  ActiveLearningRun other(preset("expA-test2", 7), ds);
  other.initialize();
  EXPECT_EQ(run.state().teach, other.state().teach);
}

TEST(Run, WholeTrainSplitAsInitialSet) {
  auto c = preset("expA-test1", 7);
  c.initial_n = 200;
  c.queries = 0;
  c.epochs_per_query = 1;
  ActiveLearningRun run(c, synthetic300());
  run.initialize();
  EXPECT_TRUE(run.state().pool.empty());
  EXPECT_TRUE(run.finished());
  c.queries = 1;
  EXPECT_EQ(code_of([&] { ActiveLearningRun bad(c, synthetic300()); }), ErrorCode::Configuration);
}

TEST(Run, BookkeepingInvariantsHoldEveryIteration) {
  const auto& ds = synthetic300();
  ActiveLearningRun run(preset("expA-test1", 3), ds);
  run.initialize();
  check_bookkeeping(run, 200);
  std::size_t pool_before = run.state().pool.size();
  while (!run.finished()) {
    const auto batch = run.run_query_iteration();
    check_bookkeeping(run, 200);
    EXPECT_EQ(run.state().pool.size(), pool_before - 5);
    pool_before = run.state().pool.size();
    EXPECT_EQ(run.state().teach.size(), 100u + batch.query_index * 5u);
    EXPECT_EQ(batch.status, BatchStatus::Labeled);
    for (std::size_t i = 0; i < batch.sample_ids.size(); ++i) {
      // teach is append-only: the batch sits at its tail in selection order
      EXPECT_EQ(run.state().teach[run.state().teach.size() - 5 + i], batch.sample_ids[i]);
    }
  }
  EXPECT_EQ(run.state().teach.size(), 200u);
  EXPECT_EQ(run.state().history.size(), 20u);
}

TEST(Run, StrategyNeverAffectsBookkeeping) {
  const auto ds = scalar_feature_dataset();
  for (auto strategy : {StrategyKind::Random, StrategyKind::LeastConfidence}) {
    auto c = scalar_config();
    c.strategy = strategy;
    ActiveLearningRun run(c, ds);
    run.initialize();
    run.set_head(learner::ClassifierHead(1, 2, 2));  // constant 0.5 output
    std::size_t train_size = run.state().pool.size() + run.state().teach.size();
    const auto& batch = run.select_query();
    EXPECT_EQ(batch.sample_ids.size(), 3u);
    run.apply_labels(simulated_oracle(ds, batch.sample_ids, 0.0, 1));
    check_bookkeeping(run, train_size);
  }
}

TEST(Run, RandomStrategyIsReproducible) {
  const auto ds = scalar_feature_dataset();
  auto c = scalar_config();
  c.strategy = StrategyKind::Random;
  const auto a = run_experiment(c, ds);
  const auto b = run_experiment(c, ds);
  ASSERT_EQ(a.state.history.size(), b.state.history.size());
  for (std::size_t i = 0; i < a.state.history.size(); ++i) {
    EXPECT_EQ(a.state.history[i].sample_ids, b.state.history[i].sample_ids);
  }
}

TEST(Run, LeastConfidencePicksPlantedUncertainSample) {
  const auto ds = scalar_feature_dataset();
  auto c = scalar_config();
  c.batch_n = 1;
  ActiveLearningRun run(c, ds);
  run.initialize();
  const SampleIndex planted = run.state().pool[run.state().pool.size() / 2];
  const double x0 = run.features(planted)[0];

  // forward(x) = sigmoid(ln 99 * |x - x0|): 0.5 at the planted sample and at
  // least 0.99 everywhere else in the pool
  learner::ClassifierHead head(1, 2, 1);
  auto& l = head.layers();
  l[0].weights = {1.0, -1.0};
  l[0].bias = {-x0, x0};
  l[1].weights = {1.0, 1.0};
  l[2].weights = {std::log(99.0)};
  run.set_head(head);
  EXPECT_DOUBLE_EQ(head.forward(run.features(planted)), 0.5);

  // brute-force scoring oracle over the pool
  SampleIndex best = 0;
  double best_score = -1;
  for (auto id : run.state().pool) {
    const double p = head.forward(run.features(id));
    if (id != planted) {
      EXPECT_GE(p, 0.99 - 1e-12);
    }
    const double s = 1.0 - std::max(p, 1.0 - p);
    if (s > best_score) {
      best_score = s;
      best = id;
    }
  }
  EXPECT_EQ(best, planted);
  const auto& batch = run.select_query();
  ASSERT_EQ(batch.sample_ids.size(), 1u);
  EXPECT_EQ(batch.sample_ids[0], planted);
  EXPECT_NEAR(batch.scores[0], 0.5, 1e-12);
  EXPECT_EQ(batch.query_index, 1);
  EXPECT_EQ(run.pending(), &run.state().history.back());
}

TEST(Run, ExternalOracleProtocol) {
  const auto ds = scalar_feature_dataset();
  ActiveLearningRun run(scalar_config(), ds);
  EXPECT_EQ(code_of([&] { run.select_query(); }), ErrorCode::Conflict);
  run.initialize();
  EXPECT_EQ(code_of([&] { run.initialize(); }), ErrorCode::Conflict);
  EXPECT_EQ(code_of([&] { run.train_current(); }), ErrorCode::Conflict);
  const auto batch = run.select_query();
  EXPECT_EQ(code_of([&] { run.select_query(); }), ErrorCode::Conflict);
  std::vector<data::Label> too_few(2, data::Label::Normal);
  EXPECT_EQ(code_of([&] { run.apply_labels(too_few); }), ErrorCode::InvalidArgument);
  run.apply_labels(simulated_oracle(ds, batch.sample_ids, 0.0, 1));
  EXPECT_EQ(run.pending(), nullptr);
  EXPECT_EQ(code_of([&] { run.select_query(); }), ErrorCode::Conflict);  // untrained batch
  const auto rows_before = run.log().rows.size();
  run.train_current();
  EXPECT_EQ(run.log().rows.size(), rows_before + 2);
  EXPECT_EQ(run.completed_queries(), 1);
}

TEST(Run, ReinitPolicyRestartsFromInitialWeights) {
  const auto ds = scalar_feature_dataset();
  auto c = scalar_config();
  c.retrain_policy = RetrainPolicy::Reinit;
  const auto a = run_experiment(c, ds);
  c.retrain_policy = RetrainPolicy::Continue;
  const auto b = run_experiment(c, ds);
  EXPECT_EQ(a.log.rows.size(), b.log.rows.size());
  // query 0 is identical, later queries diverge
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.log.rows[i], b.log.rows[i]);
  bool differs = false;
  for (std::size_t i = 2; i < a.log.rows.size(); ++i) differs |= !(a.log.rows[i] == b.log.rows[i]);
  EXPECT_TRUE(differs);
}

TEST(Run, HumanOracleRejectedByBatchRunner) {
  auto c = scalar_config();
  c.oracle = OracleMode::Human;
  const auto ds = scalar_feature_dataset();
  EXPECT_EQ(code_of([&] { run_experiment(c, ds); }), ErrorCode::Configuration);
}

TEST(Run, AbortCarriesPartialLog) {
  const auto ds = scalar_feature_dataset();
  auto c = scalar_config();
  c.learning_rate = 1e300;
  c.momentum = 0.0;
  try {
    run_experiment(c, ds);
    FAIL() << "expected divergence";
  } catch (const RunAborted& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainingDiverged);
    EXPECT_FALSE(e.partial().header.empty());
  }
}

TEST(Run, SnapshotRestoreContinuesIdentically) {
  const auto ds = scalar_feature_dataset();
  const auto c = scalar_config();
  ActiveLearningRun straight(c, ds);
  straight.initialize();
  straight.run_query_iteration();
  const auto snap = straight.snapshot_json();
  const auto& pending = straight.select_query();
  const auto pending_ids = pending.sample_ids;
  const auto snap_pending = straight.snapshot_json();

  auto resumed = ActiveLearningRun::restore(c, ds, snap);
  EXPECT_EQ(resumed.state().teach, straight.state().teach);
  EXPECT_EQ(resumed.head(), straight.head());
  EXPECT_EQ(resumed.completed_queries(), 1);

  auto parked = ActiveLearningRun::restore(c, ds, snap_pending);
  ASSERT_NE(parked.pending(), nullptr);
  EXPECT_EQ(parked.pending()->sample_ids, pending_ids);

  const auto labels = simulated_oracle(ds, pending_ids, 0.0, 5);
  straight.apply_labels(labels);
  straight.train_current();
  parked.apply_labels(labels);
  parked.train_current();
  EXPECT_EQ(parked.head(), straight.head());
  EXPECT_EQ(format_metrics_csv(parked.log()), format_metrics_csv(straight.log()));

  EXPECT_EQ(code_of([&] { ActiveLearningRun::restore(c, ds, "{}"); }), ErrorCode::Data);
}

TEST(Oracle, NoiseLevels) {
  const auto& ds = synthetic300();
  std::vector<SampleIndex> ids(100);
  std::iota(ids.begin(), ids.end(), 0);
  const auto clean = simulated_oracle(ds, ids, 0.0, 1);
  const auto flipped = simulated_oracle(ds, ids, 1.0, 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    EXPECT_EQ(clean[i], *ds.at(ids[i]).ground_truth);
    EXPECT_EQ(flipped[i], data::flip(*ds.at(ids[i]).ground_truth));
  }
  const auto half_a = simulated_oracle(ds, ids, 0.5, 9);
  const auto half_b = simulated_oracle(ds, ids, 0.5, 9);
  EXPECT_EQ(half_a, half_b);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) flips += half_a[i] != clean[i];
  EXPECT_GT(flips, 25u);
  EXPECT_LT(flips, 75u);
  EXPECT_EQ(code_of([&] { simulated_oracle(ds, ids, 1.5, 1); }), ErrorCode::Validation);
}

TEST(Oracle, MissingGroundTruthIsDataError) {
  const auto dir = temp_dir("oracle");
  {
    std::ofstream f(dir / "f.csv");
    f << "sample_id,f0\na,1\nb,2\n";
  }
  const auto ds = data::ingest_features(dir / "f.csv");
  std::vector<SampleIndex> ids{0};
  EXPECT_EQ(code_of([&] { simulated_oracle(ds, ids, 0.0, 1); }), ErrorCode::Data);
}

TEST(MetricsCsv, RoundTripAndOrdering) {
  auto c = scalar_config();
  const auto r = run_experiment(c, scalar_feature_dataset());
  const auto text = format_metrics_csv(r.log);
  EXPECT_EQ(text.rfind("# ", 0), 0u);
  EXPECT_NE(text.find("\nquery_index,epoch,train_accuracy,train_loss,test_accuracy,test_loss\n"),
            std::string::npos);
  const auto back = parse_metrics_csv(text);
  EXPECT_EQ(back.rows, r.log.rows);
  EXPECT_EQ(back.header, r.log.header);
  EXPECT_EQ(format_metrics_csv(back), text);

  const std::string cols = "query_index,epoch,train_accuracy,train_loss,test_accuracy,test_loss\n";
  EXPECT_EQ(code_of([&] { parse_metrics_csv(cols + "1,1,0,0,0,0\n0,1,0,0,0,0\n"); }), ErrorCode::Data);
  EXPECT_EQ(code_of([&] { parse_metrics_csv(cols + "0,1,0,0,0\n"); }), ErrorCode::Data);
  EXPECT_EQ(code_of([&] { parse_metrics_csv(cols + "0,x,0,0,0,0\n"); }), ErrorCode::Data);
  EXPECT_EQ(code_of([&] { parse_metrics_csv("# a=b\n"); }), ErrorCode::Data);
}

TEST(Statistics, TukeyExample) {
  const std::vector<double> v{1, 2, 3, 4, 5, 100};
  const auto t = tukey_filter(v);
  EXPECT_DOUBLE_EQ(t.q1, 2.25);
  EXPECT_DOUBLE_EQ(t.q3, 4.75);
  EXPECT_DOUBLE_EQ(t.upper_fence, 8.5);
  EXPECT_DOUBLE_EQ(t.lower_fence, -1.5);
  EXPECT_EQ(t.removed, (std::vector<double>{100}));

  const auto s = last_query_summary(log_with_last_query(v));
  EXPECT_EQ(s.outliers_removed, 1u);
  EXPECT_DOUBLE_EQ(s.last_query_mean_accuracy, 3.0);
  EXPECT_NEAR(s.last_query_std, std::sqrt(2.0), 1e-12);
  EXPECT_EQ(s.outlier_rule, "tukey_1.5iqr_linear_quartiles");
  EXPECT_EQ(s.epochs, 6u);
}

TEST(Statistics, QuartilesMatchIndependentInterpolation) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.9, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = u(rng);
    std::sort(v.begin(), v.end());
    for (double q : {0.25, 0.5, 0.75}) {
      // position h = (n - 1) q between order statistics floor(h) and ceil(h)
      const double h = (static_cast<double>(v.size()) - 1) * q;
      const double lo = v[static_cast<std::size_t>(std::floor(h))];
      const double hi = v[static_cast<std::size_t>(std::ceil(h))];
      EXPECT_NEAR(quantile_linear(v, q), lo + (h - std::floor(h)) * (hi - lo), 1e-15);
    }
  }
}

TEST(Statistics, ConstantSeriesHasZeroStd) {
  for (double v : {0.95, 0.97, 1.0, 0.1 + 0.2}) {
    const auto s = last_query_summary(log_with_last_query(std::vector<double>(25, v)));
    EXPECT_EQ(s.last_query_std, 0.0);
    EXPECT_EQ(s.outliers_removed, 0u);
    EXPECT_EQ(s.last_query_mean_accuracy, v);
  }
}

TEST(Statistics, SummaryInvariantToRowOrderWithinLastQuery) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.9, 1.0);
  std::vector<double> acc(25);
  for (auto& a : acc) a = std::round(u(rng) * 100) / 100;
  const auto base = last_query_summary(log_with_last_query(acc));
  for (int t = 0; t < 20; ++t) {
    auto log = log_with_last_query(acc);
    std::shuffle(log.rows.begin() + 1, log.rows.end(), rng);
    const auto s = last_query_summary(log);
    EXPECT_EQ(s.last_query_mean_accuracy, base.last_query_mean_accuracy);
    EXPECT_EQ(s.last_query_std, base.last_query_std);
    EXPECT_EQ(s.outliers_removed, base.outliers_removed);
  }
  EXPECT_GE(base.last_query_std, 0.0);
}

TEST(Statistics, TruncatedLogNamesMissingQuery) {
  auto log = log_with_last_query({0.9, 0.9});
  log.header = {{"queries", "4"}};
  try {
    last_query_summary(log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Data);
    EXPECT_NE(std::string(e.what()).find("final query 4"), std::string::npos);
  }
  MetricsLog empty;
  EXPECT_EQ(code_of([&] { last_query_summary(empty); }), ErrorCode::Data);
  auto partial = log_with_last_query({0.9, 0.9});
  partial.header = {{"queries", "1"}, {"epochs_per_query", "25"}};
  EXPECT_EQ(code_of([&] { last_query_summary(partial); }), ErrorCode::Data);
}

TEST(Compare, ExperimentAAlignment) {
  auto c1 = preset("expA-test1", 7);
  auto c2 = preset("expA-test2", 7);
  c1.epochs_per_query = c2.epochs_per_query = 2;
  const auto a = run_experiment(c1, synthetic300()).log;
  const auto b = run_experiment(c2, synthetic300()).log;
  const auto rows = compare_runs(a, b);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(rows[i].cumulative_samples, 20 * (i + 1));
    EXPECT_EQ(rows[i].query_a, static_cast<int>(4 * (i + 1)));
    EXPECT_EQ(rows[i].query_b, static_cast<int>(i + 1));
    const auto last_a = std::find_if(a.rows.rbegin(), a.rows.rend(), [&](const MetricsRow& r) {
      return r.query_index == rows[i].query_a;
    });
    EXPECT_EQ(rows[i].test_accuracy_a, last_a->test_accuracy);
    const auto first_b = std::find_if(b.rows.begin(), b.rows.end(), [&](const MetricsRow& r) {
      return r.query_index == rows[i].query_b;
    });
    EXPECT_EQ(rows[i].first_epoch_accuracy_b, first_b->test_accuracy);
  }
  const std::vector<std::size_t> some{40, 100};
  EXPECT_EQ(compare_runs(a, b, some).size(), 2u);
  const std::vector<std::size_t> bad{30};
  EXPECT_EQ(code_of([&] { compare_runs(a, b, bad); }), ErrorCode::Validation);
  const auto csv = format_comparison_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(Compare, SelfComparisonHasZeroDeltas) {
  const auto a = run_experiment(scalar_config(), scalar_feature_dataset()).log;
  for (const auto& r : compare_runs(a, a)) {
    EXPECT_EQ(r.test_accuracy_a, r.test_accuracy_b);
    EXPECT_EQ(r.first_epoch_accuracy_a, r.first_epoch_accuracy_b);
  }
}

TEST(Compare, MismatchedRunsRejected) {
  auto c = scalar_config();
  const auto ds = scalar_feature_dataset();
  const auto a = run_experiment(c, ds).log;
  c.queries = 2;
  const auto fewer = run_experiment(c, ds).log;
  EXPECT_EQ(code_of([&] { compare_runs(a, fewer); }), ErrorCode::Validation);
  c = scalar_config();
  c.initial_n = 12;
  const auto other_init = run_experiment(c, ds).log;
  EXPECT_EQ(code_of([&] { compare_runs(a, other_init); }), ErrorCode::Validation);
  auto truncated = a;
  truncated.rows.resize(4);
  EXPECT_EQ(code_of([&] { compare_runs(a, truncated); }), ErrorCode::Validation);
}

TEST(Determinism, IdenticalConfigGivesIdenticalLog) {
  auto c = preset("expA-test2", 5);
  const auto a = run_experiment(c, synthetic300());
  const auto b = run_experiment(c, synthetic300());
  EXPECT_EQ(format_metrics_csv(a.log), format_metrics_csv(b.log));
  EXPECT_EQ(summary_to_json(a.summary), summary_to_json(b.summary));
}
