#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "features.hpp"
#include "learner.hpp"

using namespace alearn;
using namespace alearn::learner;

namespace fs = std::filesystem;

namespace {

// Straight-line re-implementation of the head arithmetic.
double oracle_forward(const ClassifierHead& head, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& layer = head.layers()[l];
    std::vector<double> z(layer.outputs);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      double s = layer.bias[o];
      for (std::size_t i = 0; i < layer.inputs; ++i) s += layer.weights[o * layer.inputs + i] * a[i];
      z[o] = l < 2 ? (s > 0 ? s : 0.0) : 1.0 / (1.0 + std::exp(-s));
    }
    a = z;
  }
  return a[0];
}

data::Sample feature_sample(std::string id, std::vector<double> f,
                            std::optional<data::Label> label = std::nullopt) {
  data::Sample s;
  s.id = std::move(id);
  s.features = std::move(f);
  s.ground_truth = label;
  return s;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("alearn_learner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Gap2d, Examples) {
  FeatureMap one(1, 1, 3);
  one.data = {1, 2, 3};
  EXPECT_EQ(gap2d(one), (std::vector<double>{1, 2, 3}));

  FeatureMap four(2, 2, 1);
  four.data = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(gap2d(four)[0], 2.5);

  FeatureMap constant(5, 7, 4, 0.25);
  for (double v : gap2d(constant)) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Gap2d, LengthEqualsChannelsForRandomShapes) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = 1 + rng() % 9, w = 1 + rng() % 9, c = 1 + rng() % 12;
    FeatureMap fm(h, w, c);
    for (auto& v : fm.data) v = static_cast<double>(rng() % 100);
    const auto out = gap2d(fm);
    ASSERT_EQ(out.size(), c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) s += fm.at(y, x, ch);
      EXPECT_NEAR(out[ch], s / static_cast<double>(h * w), 1e-12);
    }
  }
}

TEST(Forward, ZeroHeadGivesHalf) {
  ClassifierHead head(4, 3, 2);
  EXPECT_DOUBLE_EQ(head.forward(std::vector<double>{1, -2, 3, 4}), 0.5);

  ClassifierHead unit(1, 1, 1);
  for (auto& l : unit.layers()) l.weights = {1.0};
  EXPECT_DOUBLE_EQ(unit.forward(std::vector<double>{0.0}), 0.5);
}

TEST(Forward, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(17);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto head = ClassifierHead::initialized(6, 5, 4, seed);
    const auto x = random_vector(rng, 6);
    EXPECT_NEAR(head.forward(x), oracle_forward(head, x), 1e-12);
  }
}

TEST(Forward, ShapeMismatchIsConfigurationError) {
  ClassifierHead head(4, 3, 2);
  try {
    head.forward(std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Configuration);
  }
}

TEST(Forward, OutputStrictlyInsideUnitInterval) {
  auto head = ClassifierHead::initialized(3, 4, 2, 1);
  for (auto& w : head.layers()[2].bias) w = 500.0;
  const double hi = head.forward(std::vector<double>{1, 1, 1});
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(hi, 1.0 - kProbabilityClamp, 1e-15);
  for (auto& w : head.layers()[2].bias) w = -500.0;
  const double lo = head.forward(std::vector<double>{1, 1, 1});
  EXPECT_GT(lo, 0.0);
  EXPECT_NEAR(lo, kProbabilityClamp, 1e-15);
}

TEST(Initialization, GlorotBoundsAndZeroBias) {
  const auto head = ClassifierHead::initialized(16, 64, 16, 42);
  for (const auto& l : head.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.inputs + l.outputs));
    for (double w : l.weights) EXPECT_LE(std::abs(w), bound);
    for (double b : l.bias) EXPECT_EQ(b, 0.0);
  }
  EXPECT_EQ(head, ClassifierHead::initialized(16, 64, 16, 42));
  EXPECT_FALSE(head == ClassifierHead::initialized(16, 64, 16, 43));
}

TEST(BceLoss, Examples) {
  EXPECT_NEAR(bce_loss(1.0, 1), 0.0, 1e-6);
  EXPECT_NEAR(bce_loss(0.5, 1), 0.693147, 1e-6);
  EXPECT_NEAR(bce_loss(0.9, 0), 2.302585, 1e-6);
  EXPECT_NEAR(bce_loss(0.9, 0), -std::log(0.1), 1e-12);
}

TEST(BceLoss, NonNegativeAndMonotone) {
  double prev1 = INFINITY, prev0 = -INFINITY;
  for (int i = 0; i <= 1000; ++i) {
    const double p = i / 1000.0;
    const double l1 = bce_loss(p, 1), l0 = bce_loss(p, 0);
    EXPECT_GE(l1, 0.0);
    EXPECT_GE(l0, 0.0);
    EXPECT_LE(l1, prev1);
    EXPECT_GE(l0, prev0);
    if (i > 0 && i < 1000) {
      EXPECT_GT(l1, 0.0);
      EXPECT_GT(l0, 0.0);
      EXPECT_LT(l1, prev1);
      EXPECT_GT(l0, prev0);
    }
    prev1 = l1;
    prev0 = l0;
  }
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1)));
  EXPECT_NEAR(bce_loss(0.0, 1), -std::log(kProbabilityClamp), 1e-9);
}

namespace {

// Glorot heads start with zero biases; a layer whose inputs are all zero then
// sits exactly on the ReLU kink, where central differences see one side only.
ClassifierHead check_head(std::size_t c, std::size_t d1, std::size_t d2, std::uint64_t seed) {
  auto head = ClassifierHead::initialized(c, d1, d2, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& layer : head.layers()) {
    for (auto& b : layer.bias) b = u(rng);
  }
  return head;
}

}  // namespace

TEST(GradientCheck, SmallSeededHead) {
  std::mt19937_64 rng(4);
  const auto head = check_head(4, 3, 2, 99);
  for (int label : {0, 1}) {
    EXPECT_LT(gradient_check(head, random_vector(rng, 4), label, 1e-5), 1e-4);
  }
}

TEST(GradientCheck, HundredRandomConfigurations) {
  std::mt19937_64 rng(123);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 1 + rng() % 16, d1 = 1 + rng() % 8, d2 = 1 + rng() % 8;
    const auto head = check_head(c, d1, d2, 1000 + t);
    const double err = gradient_check(head, random_vector(rng, c), t % 2, 1e-5);
    worst = std::max(worst, err);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GradientCheck, ZeroHeadOutputBiasGradient) {
  const ClassifierHead head(3, 2, 2);
  const std::vector<double> x(3, 0.0);
  for (int label : {0, 1}) {
    ClassifierHead grad(3, 2, 2);
    head.accumulate_gradient(x, label, grad);
    const double analytic = grad.layers()[2].bias[0];
    EXPECT_DOUBLE_EQ(analytic, 0.5 - label);

    const double eps = 1e-5;
    ClassifierHead plus = head, minus = head;
    plus.layers()[2].bias[0] += eps;
    minus.layers()[2].bias[0] -= eps;
    const double numeric =
        (bce_loss(plus.forward(x), label) - bce_loss(minus.forward(x), label)) / (2 * eps);
    EXPECT_NEAR(numeric, 0.5 - label, 1e-8);
  }
}

TEST(GradientCheck, EpsilonRobustnessAndRange) {
  std::mt19937_64 rng(8);
  const auto head = check_head(4, 3, 2, 5);
  const auto x = random_vector(rng, 4);
  const double a = gradient_check(head, x, 1, 1e-5);
  const double b = gradient_check(head, x, 1, 2e-5);
  EXPECT_NE(a, b);
  EXPECT_EQ(a < 1e-4, b < 1e-4);
  EXPECT_THROW(gradient_check(head, x, 1, 1e-3), Error);
  EXPECT_THROW(gradient_check(head, x, 1, 1e-7), Error);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

namespace {

// Two boxes of half-width 0.5 centred at -1.5 and +1.5 on every axis: the gap
// between them is 2 along each axis.
std::vector<Example> two_clusters(std::size_t per_class, std::size_t dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Example> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    Example e;
    e.label = label;
    for (std::size_t d = 0; d < dims; ++d) e.features.push_back((label ? 1.5 : -1.5) + u(rng));
    out.push_back(e);
  }
  return out;
}

// Perceptron: terminates with zero errors exactly when the set is linearly
// separable (within the iteration cap).
bool linearly_separable(const std::vector<Example>& data) {
  const std::size_t d = data.front().features.size();
  std::vector<double> w(d + 1, 0.0);
  for (int pass = 0; pass < 1000; ++pass) {
    int errors = 0;
    for (const auto& e : data) {
      double s = w[d];
      for (std::size_t i = 0; i < d; ++i) s += w[i] * e.features[i];
      const int y = e.label ? 1 : -1;
      if (y * s <= 0) {
        for (std::size_t i = 0; i < d; ++i) w[i] += y * e.features[i];
        w[d] += y;
        ++errors;
      }
    }
    if (errors == 0) return true;
  }
  return false;
}

}  // namespace

TEST(Train, SeparableClustersReachPerfectTrainAccuracy) {
  const auto data = two_clusters(30, 4, 1);
  ASSERT_TRUE(linearly_separable(data));
  auto head = ClassifierHead::initialized(4, 64, 16, 7);
  TrainConfig cfg;
  cfg.seed = 7;
  const auto report = train(head, data, cfg);
  ASSERT_EQ(report.epochs.size(), 25u);
  EXPECT_DOUBLE_EQ(report.epochs.back().accuracy, 1.0);
  EXPECT_FALSE(report.single_class);
  EXPECT_TRUE(head.all_finite());
}

TEST(Train, OneEpochChangesWeights) {
  const auto data = two_clusters(10, 3, 2);
  auto head = ClassifierHead::initialized(3, 4, 2, 1);
  const auto before = head;
  TrainConfig cfg;
  cfg.epochs = 1;
  train(head, data, cfg);
  EXPECT_FALSE(head == before);
  cfg.epochs = 0;
  EXPECT_THROW(train(head, data, cfg), Error);
}

TEST(Train, DeterministicPerSeed) {
  const auto data = two_clusters(20, 5, 3);
  auto a = ClassifierHead::initialized(5, 8, 4, 11);
  auto b = a;
  TrainConfig cfg;
  cfg.seed = 99;
  std::vector<ClassifierHead> traj_a, traj_b;
  const auto ra = train(a, data, cfg, [&](int, const EvalResult&) { traj_a.push_back(a); });
  const auto rb = train(b, data, cfg, [&](int, const EvalResult&) { traj_b.push_back(b); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(traj_a, traj_b);
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].accuracy, rb.epochs[i].accuracy);
    EXPECT_EQ(ra.epochs[i].loss, rb.epochs[i].loss);
  }
  auto c = ClassifierHead::initialized(5, 8, 4, 11);
  cfg.seed = 100;
  train(c, data, cfg);
  EXPECT_FALSE(c == a);
}

TEST(Train, SingleClassIsFlaggedNotRejected) {
  std::vector<Example> data(6, Example{{0.1, 0.2}, 1});
  auto head = ClassifierHead::initialized(2, 3, 2, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto report = train(head, data, cfg);
  EXPECT_TRUE(report.single_class);
  EXPECT_EQ(report.epochs.size(), 2u);
}

TEST(Train, DivergenceCarriesEpoch) {
  const auto data = two_clusters(10, 3, 5);
  auto head = ClassifierHead::initialized(3, 4, 2, 1);
  head.layers()[0].weights[0] = INFINITY;
  TrainConfig cfg;
  try {
    train(head, data, cfg);
    FAIL();
  } catch (const TrainingDivergedError& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainingDiverged);
    EXPECT_EQ(e.epoch(), 1);
  }
}

TEST(Train, EmptySetRejected) {
  auto head = ClassifierHead::initialized(2, 2, 2, 1);
  std::vector<Example> none;
  EXPECT_THROW(train(head, none, TrainConfig{}), Error);
}

TEST(PredictProba, Contracts) {
  const SampleFeaturesExtractor ex(3);
  const ClassifierHead zero(3, 2, 2);
  std::vector<data::Sample> none;
  EXPECT_TRUE(predict_proba(zero, ex, none).empty());

  std::vector<data::Sample> one{feature_sample("a", {1, 2, 3})};
  const auto p = predict_proba(zero, ex, one);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].sample_id, "a");
  EXPECT_DOUBLE_EQ(p[0].probs[0], 0.5);
  EXPECT_DOUBLE_EQ(p[0].probs[1], 0.5);

  std::mt19937_64 rng(1);
  std::vector<data::Sample> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(feature_sample("s" + std::to_string(i), random_vector(rng, 3)));
  const auto head = ClassifierHead::initialized(3, 4, 2, 3);
  const auto preds = predict_proba(head, ex, pool);
  ASSERT_EQ(preds.size(), 10u);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_EQ(preds[i].sample_id, pool[i].id);
    EXPECT_NEAR(preds[i].probs[0] + preds[i].probs[1], 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(preds[i].probs[0], head.forward(*pool[i].features));
  }
}

TEST(PredictProba, MissingPrecomputedFeatureNamesTheId) {
  FeatureTable table(2);
  table.add("known", {1.0, 2.0});
  const PrecomputedExtractor ex(std::move(table));
  const ClassifierHead head(2, 2, 2);
  std::vector<data::Sample> samples{feature_sample("known", {}), feature_sample("ghost", {})};
  try {
    predict_proba(head, ex, samples);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Data);
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Evaluate, ZeroHeadOnBalancedSet) {
  const SampleFeaturesExtractor ex(2);
  const ClassifierHead zero(2, 2, 2);
  std::vector<data::Sample> s;
  for (int i = 0; i < 10; ++i) {
    s.push_back(feature_sample(std::to_string(i), {0.1 * i, 1.0},
                               i % 2 ? data::Label::Defect : data::Label::Normal));
  }
  const auto r = evaluate(zero, ex, s);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
  std::vector<data::Sample> none;
  EXPECT_THROW(evaluate(zero, ex, none), Error);
}

TEST(Evaluate, PerfectHead) {
  const SampleFeaturesExtractor ex(1);
  ClassifierHead head(1, 1, 1);
  head.layers()[0].weights = {1.0};
  head.layers()[1].weights = {1.0};
  head.layers()[2].weights = {100.0};
  head.layers()[2].bias = {-50.0};
  std::vector<data::Sample> s{feature_sample("n", {0.0}, data::Label::Normal),
                              feature_sample("d", {1.0}, data::Label::Defect)};
  EXPECT_DOUBLE_EQ(evaluate(head, ex, s).accuracy, 1.0);
}

TEST(Evaluate, MatchesBruteForceOnSyntheticSplit) {
  data::SynthParams params;
  params.height = params.width = 32;
  const auto ds = data::generate_synthetic(params, 40);
  const auto sp = data::split(ds, 0.5, 3, true);
  const FixedConvExtractor ex;
  const auto head = ClassifierHead::initialized(ex.output_channels(), 8, 4, 21);
  std::vector<data::Sample> test;
  for (auto i : sp.test) test.push_back(ds.at(i));

  double correct = 0, loss = 0;
  for (const auto& s : test) {
    const double p = oracle_forward(head, gap2d(ex.extract(s)));
    const double clamped = std::clamp(p, kProbabilityClamp, 1 - kProbabilityClamp);
    const int y = data::label_value(*s.ground_truth);
    correct += ((p >= 0.5) == (y == 1)) ? 1 : 0;
    loss += -(y * std::log(clamped) + (1 - y) * std::log(1 - clamped));
  }
  const auto r = evaluate(head, ex, test);
  EXPECT_NEAR(r.accuracy, correct / test.size(), 1e-12);
  EXPECT_NEAR(r.loss, loss / test.size(), 1e-9);
}

TEST(FixedConv, FiltersAreZeroMeanUnitNorm) {
  const FixedConvExtractor ex;
  EXPECT_EQ(ex.output_channels(), 16u);
  for (const auto& k : ex.filters()) {
    EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 0.0, 1e-12);
    EXPECT_NEAR(std::inner_product(k.begin(), k.end(), k.begin(), 0.0), 1.0, 1e-12);
  }
  // odd filters respond to a dark centre
  for (std::size_t f = 1; f < ex.filters().size(); f += 2) {
    const auto& k = ex.filters()[f];
    EXPECT_EQ(std::min_element(k.begin(), k.end()) - k.begin(), 4);
  }
  const FixedConvExtractor again;
  EXPECT_EQ(ex.filters(), again.filters());
  const FixedConvExtractor other(123);
  EXPECT_NE(ex.filters(), other.filters());
}

TEST(FixedConv, FlatFieldIsSilentAndDarkSpotIsNot) {
  const FixedConvExtractor ex;
  std::vector<double> flat(16 * 16, 0.6);
  const auto fm = ex.convolve(flat, 16, 16);
  EXPECT_EQ(fm.height, 8u);
  EXPECT_EQ(fm.width, 8u);
  for (double v : fm.data) EXPECT_EQ(v, 0.0);

  auto spot = flat;
  spot[8 * 16 + 8] = 0.0;
  const auto g = gap2d(ex.convolve(spot, 16, 16));
  double blob = 0;
  for (std::size_t f = 1; f < g.size(); f += 2) blob += g[f];
  EXPECT_GT(blob, 0.0);
}

TEST(FixedConv, TranslationCovariantOnInterior) {
  const FixedConvExtractor ex;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 32;
  std::vector<double> a(n * n, 0.0), b(n * n, 0.0);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      const double v = u(rng);
      a[(10 + y) * n + (10 + x)] = v;
      b[(12 + y) * n + (14 + x)] = v;  // shifted by (2, 4) pixels = (1, 2) outputs
    }
  }
  const auto fa = ex.convolve(a, n, n);
  const auto fb = ex.convolve(b, n, n);
  for (std::size_t oy = 2; oy + 3 < fa.height; ++oy) {
    for (std::size_t ox = 2; ox + 4 < fa.width; ++ox) {
      for (std::size_t c = 0; c < fa.channels; ++c) {
        ASSERT_DOUBLE_EQ(fa.at(oy, ox, c), fb.at(oy + 1, ox + 2, c));
      }
    }
  }
}

TEST(RawDownsample, BoxAverage) {
  data::Sample s;
  s.id = "x";
  s.image = data::GrayImage(4, 4, 0);
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 2; ++y) s.image->at(y, x) = 255;
  const RawDownsampleExtractor ex(2, 2);
  const auto f = extract_features(ex, s);
  EXPECT_EQ(f, (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
  data::Sample featureless = feature_sample("f", {1.0});
  EXPECT_THROW(ex.extract(featureless), Error);
}

TEST(FeatureScaler, StandardizesToTarget) {
  std::mt19937_64 rng(2);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 50; ++i) {
    auto r = random_vector(rng, 3);
    r[0] = 5 + 3 * r[0];
    r[2] = 7.0;  // constant channel
    rows.push_back(r);
  }
  const auto sc = FeatureScaler::fit(rows, 0.4);
  for (auto& r : rows) sc.apply(r);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (const auto& r : rows) m += r[c];
    m /= rows.size();
    for (const auto& r : rows) v += (r[c] - m) * (r[c] - m);
    v /= rows.size();
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(v), c == 2 ? 0.0 : 0.4, 1e-12);
  }
  std::vector<double> narrow{1.0};
  EXPECT_THROW(sc.apply(narrow), Error);
  std::vector<std::vector<double>> none;
  EXPECT_THROW(FeatureScaler::fit(none), Error);
  std::vector<std::vector<double>> ragged{{1, 2}, {1}};
  EXPECT_THROW(FeatureScaler::fit(ragged), Error);
  EXPECT_THROW(FeatureScaler::fit(rows, 0.0), Error);
}

TEST(FeatureCsv, ParseFormatRoundTrip) {
  const std::string text = "sample_id,f0,f1\na,0.1,2\nb,-3.5e-7,1e300\n";
  const auto t = parse_feature_csv(text);
  EXPECT_EQ(t.width(), 2u);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(*t.find("b"), (std::vector<double>{-3.5e-7, 1e300}));
  EXPECT_EQ(t.find("zzz"), nullptr);
  const auto again = parse_feature_csv(format_feature_csv(t));
  EXPECT_EQ(*again.find("a"), *t.find("a"));
  EXPECT_EQ(*again.find("b"), *t.find("b"));

  const auto dir = temp_dir("csv");
  save_feature_csv(t, dir / "f.csv");
  EXPECT_EQ(*load_feature_csv(dir / "f.csv").find("a"), *t.find("a"));
  EXPECT_THROW(load_feature_csv(dir / "missing.csv"), Error);
}

TEST(FeatureCsv, RejectsMalformedInput) {
  const auto code_of = [](const std::string& text) {
    try {
      parse_feature_csv(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  EXPECT_EQ(code_of("sample_id,f0,f1\na,1,2\nb,1\n"), ErrorCode::Data);  // ragged
  EXPECT_EQ(code_of("id,f0\na,1\n"), ErrorCode::Data);                  // header
  EXPECT_EQ(code_of("sample_id,f0,f2\na,1,2\n"), ErrorCode::Data);      // column names
  EXPECT_EQ(code_of("sample_id,f0\na,1\na,2\n"), ErrorCode::Data);      // duplicate id
  EXPECT_EQ(code_of("sample_id,f0\na,x\n"), ErrorCode::Data);           // not a number
  EXPECT_EQ(code_of(""), ErrorCode::Data);
}

TEST(Checkpoint, BitExactRoundTrip) {
  auto head = ClassifierHead::initialized(16, 64, 16, 2024);
  head.layers()[0].bias[3] = 0.1 + 0.2;
  head.layers()[2].bias[0] = -1.0 / 3.0;
  head.layers()[1].weights[0] = 5e-324;
  const auto dir = temp_dir("ckpt");
  save_checkpoint(head, dir / "head.json");
  const auto loaded = load_checkpoint(dir / "head.json");
  EXPECT_EQ(loaded, head);
  EXPECT_EQ(loaded.seed(), head.seed());
  for (std::size_t i = 0; i < head.parameter_count(); ++i) {
    const double a = loaded.parameter(i), b = head.parameter(i);
    ASSERT_EQ(std::memcmp(&a, &b, sizeof(double)), 0);
  }
  EXPECT_EQ(head_from_json(head_to_json(head)), head);
}

TEST(Checkpoint, RejectsCorruptDocuments) {
  EXPECT_THROW(head_from_json("{}"), Error);
  EXPECT_THROW(head_from_json("not json"), Error);
  auto doc = nlohmann::json::parse(head_to_json(ClassifierHead::initialized(2, 2, 2, 1)));
  auto shape = doc;
  shape["layers"][1]["weights"].push_back(0.5);
  EXPECT_THROW(head_from_json(shape.dump()), Error);
  auto version = doc;
  version["version"] = 2;
  EXPECT_THROW(head_from_json(version.dump()), Error);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/head.json"), Error);
}
