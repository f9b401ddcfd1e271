#include "learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace alearn::learner {

using nlohmann::json;

std::vector<double> gap2d(const FeatureMap& fm) {
  if (fm.height == 0 || fm.width == 0 || fm.channels == 0 ||
      fm.data.size() != fm.height * fm.width * fm.channels) {
    fail(ErrorCode::Validation, "malformed feature map");
  }
  std::vector<double> out(fm.channels, 0.0);
  for (std::size_t pos = 0; pos < fm.height * fm.width; ++pos) {
    for (std::size_t c = 0; c < fm.channels; ++c) out[c] += fm.data[pos * fm.channels + c];
  }
  const double area = static_cast<double>(fm.height * fm.width);
  for (auto& v : out) v /= area;
  return out;
}

namespace {

const data::GrayImage& require_pixels(const data::Sample& sample) {
  if (!sample.image) {
    fail(ErrorCode::Data, "sample '" + sample.id + "' has no pixel data");
  }
  return *sample.image;
}

}  // namespace

// ---------------------------------------------------------------------------
// Extractors

RawDownsampleExtractor::RawDownsampleExtractor(std::size_t height, std::size_t width)
    : height_(height), width_(width) {
  if (height == 0 || width == 0) {
    fail(ErrorCode::Configuration, "downsample target must be non-empty");
  }
}

FeatureMap RawDownsampleExtractor::extract(const data::Sample& sample) const {
  const auto& image = require_pixels(sample);
  if (image.height < height_ || image.width < width_) {
    fail(ErrorCode::Configuration, "image smaller than downsample target");
  }
  FeatureMap out(1, 1, height_ * width_);
  for (std::size_t ty = 0; ty < height_; ++ty) {
    const std::size_t y0 = ty * image.height / height_;
    const std::size_t y1 = (ty + 1) * image.height / height_;
    for (std::size_t tx = 0; tx < width_; ++tx) {
      const std::size_t x0 = tx * image.width / width_;
      const std::size_t x1 = (tx + 1) * image.width / width_;
      double sum = 0.0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) sum += image.at(y, x);
      }
      out.data[ty * width_ + tx] = sum / (255.0 * static_cast<double>((y1 - y0) * (x1 - x0)));
    }
  }
  return out;
}

std::string RawDownsampleExtractor::describe() const {
  return "raw_downsample(" + std::to_string(height_) + "x" + std::to_string(width_) + ")";
}

FixedConvExtractor::FixedConvExtractor(std::uint64_t seed, std::size_t filters,
                                       std::size_t stride)
    : seed_(seed), stride_(stride) {
  if (filters == 0 || stride == 0) {
    fail(ErrorCode::Configuration, "fixed conv needs filters >= 1 and stride >= 1");
  }
  Rng rng(seed);
  filters_.resize(filters);
  bias_.assign(filters, -kResponseThreshold);
  for (std::size_t f = 0; f < filters; ++f) {
    auto& k = filters_[f];
    for (auto& w : k) w = rng.normal();
    if (f % 2 == 1) {
      // blob-like: positive surround, strongly negative centre (dark spot)
      for (auto& w : k) w = std::abs(w);
      k[4] = -std::abs(k[4]) - 2.0;
    }
    const double mean = std::accumulate(k.begin(), k.end(), 0.0) / 9.0;
    for (auto& w : k) w -= mean;
    const double norm = std::sqrt(std::inner_product(k.begin(), k.end(), k.begin(), 0.0));
    for (auto& w : k) w /= norm;
  }
}

FeatureMap FixedConvExtractor::convolve(std::span<const double> field, std::size_t height,
                                        std::size_t width) const {
  const std::size_t out_h = (height + stride_ - 1) / stride_;
  const std::size_t out_w = (width + stride_ - 1) / stride_;
  FeatureMap out(out_h, out_w, filters_.size());
  const auto pixel = [&](long y, long x) -> double {
    y = std::clamp(y, 0L, static_cast<long>(height) - 1);
    x = std::clamp(x, 0L, static_cast<long>(width) - 1);
    return field[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
  };
  std::array<double, 9> patch{};
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const long cy = static_cast<long>(oy * stride_);
      const long cx = static_cast<long>(ox * stride_);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) patch[(dy + 1) * 3 + (dx + 1)] = pixel(cy + dy, cx + dx);
      }
      for (std::size_t f = 0; f < filters_.size(); ++f) {
        double acc = bias_[f];
        for (std::size_t i = 0; i < 9; ++i) acc += filters_[f][i] * patch[i];
        out.at(oy, ox, f) = std::max(0.0, acc);
      }
    }
  }
  return out;
}

FeatureMap FixedConvExtractor::extract(const data::Sample& sample) const {
  const auto& image = require_pixels(sample);
  std::vector<double> field(image.pixels.size());
  for (std::size_t i = 0; i < field.size(); ++i) field[i] = image.pixels[i] / 255.0;
  return convolve(field, image.height, image.width);
}

std::string FixedConvExtractor::describe() const {
  return "fixed_conv(filters=" + std::to_string(filters_.size()) +
         ",stride=" + std::to_string(stride_) + ",seed=" + std::to_string(seed_) + ")";
}

PrecomputedExtractor::PrecomputedExtractor(FeatureTable table) : table_(std::move(table)) {
  if (table_.width() == 0) fail(ErrorCode::Configuration, "feature table has no columns");
}

FeatureMap PrecomputedExtractor::extract(const data::Sample& sample) const {
  const auto* row = table_.find(sample.id);
  if (!row) fail(ErrorCode::Data, "no precomputed features for sample '" + sample.id + "'");
  FeatureMap out(1, 1, row->size());
  out.data = *row;
  return out;
}

std::string PrecomputedExtractor::describe() const {
  return "precomputed(channels=" + std::to_string(table_.width()) + ")";
}

FeatureMap SampleFeaturesExtractor::extract(const data::Sample& sample) const {
  if (!sample.features) fail(ErrorCode::Data, "sample '" + sample.id + "' has no features");
  if (sample.features->size() != channels_) {
    fail(ErrorCode::Configuration, "sample '" + sample.id + "' has " +
                                       std::to_string(sample.features->size()) +
                                       " features, expected " + std::to_string(channels_));
  }
  FeatureMap out(1, 1, channels_);
  out.data = *sample.features;
  return out;
}

std::string SampleFeaturesExtractor::describe() const {
  return "sample_features(channels=" + std::to_string(channels_) + ")";
}

std::vector<double> extract_features(const FeatureExtractor& extractor,
                                     const data::Sample& sample) {
  auto fm = extractor.extract(sample);
  if (fm.channels != extractor.output_channels()) {
    fail(ErrorCode::Configuration, "extractor emitted " + std::to_string(fm.channels) +
                                       " channels, declared " +
                                       std::to_string(extractor.output_channels()));
  }
  if (fm.height == 1 && fm.width == 1) return std::move(fm.data);
  return gap2d(fm);
}

FeatureScaler FeatureScaler::fit(std::span<const std::vector<double>> rows, double target_std) {
  if (!(target_std > 0.0) || !std::isfinite(target_std)) {
    fail(ErrorCode::InvalidArgument, "target std must be positive");
  }
  if (rows.empty()) fail(ErrorCode::InvalidArgument, "cannot fit a scaler on no rows");
  const std::size_t width = rows.front().size();
  FeatureScaler s;
  s.mean.assign(width, 0.0);
  s.scale.assign(width, target_std);
  for (const auto& r : rows) {
    if (r.size() != width) fail(ErrorCode::Validation, "ragged feature rows");
    for (std::size_t c = 0; c < width; ++c) s.mean[c] += r[c];
  }
  const double n = static_cast<double>(rows.size());
  for (auto& m : s.mean) m /= n;
  std::vector<double> var(width, 0.0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < width; ++c) var[c] += (r[c] - s.mean[c]) * (r[c] - s.mean[c]);
  }
  for (std::size_t c = 0; c < width; ++c) {
    const double sd = std::sqrt(var[c] / n);
    if (sd > 1e-12) s.scale[c] = target_std / sd;
  }
  return s;
}

void FeatureScaler::apply(std::vector<double>& row) const {
  if (row.size() != mean.size()) fail(ErrorCode::Validation, "scaler width mismatch");
  for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean[c]) * scale[c];
}

// ---------------------------------------------------------------------------
// Head

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void dense(const DenseLayer& layer, std::span<const double> in, std::vector<double>& out,
           bool relu) {
  out.assign(layer.outputs, 0.0);
  for (std::size_t o = 0; o < layer.outputs; ++o) {
    const double* w = layer.weights.data() + o * layer.inputs;
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < layer.inputs; ++i) acc += w[i] * in[i];
    out[o] = relu ? std::max(0.0, acc) : acc;
  }
}

}  // namespace

ClassifierHead::ClassifierHead(std::size_t inputs, std::size_t hidden1, std::size_t hidden2)
    : layers_{DenseLayer(inputs, hidden1), DenseLayer(hidden1, hidden2), DenseLayer(hidden2, 1)} {
  if (inputs == 0 || hidden1 == 0 || hidden2 == 0) {
    fail(ErrorCode::Configuration, "classifier head dimensions must be >= 1");
  }
}

ClassifierHead ClassifierHead::initialized(std::size_t inputs, std::size_t hidden1,
                                           std::size_t hidden2, std::uint64_t seed) {
  ClassifierHead head(inputs, hidden1, hidden2);
  head.seed_ = seed;
  Rng rng(seed);
  for (auto& layer : head.layers_) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    for (auto& w : layer.weights) w = rng.uniform(-limit, limit);
  }
  return head;
}

void ClassifierHead::check_input(std::span<const double> features) const {
  if (features.size() != inputs()) {
    fail(ErrorCode::Configuration, "head expects " + std::to_string(inputs()) +
                                       " features, got " + std::to_string(features.size()));
  }
}

double ClassifierHead::logit(std::span<const double> features) const {
  check_input(features);
  std::vector<double> h1, h2, out;
  dense(layers_[0], features, h1, true);
  dense(layers_[1], h1, h2, true);
  dense(layers_[2], h2, out, false);
  return out[0];
}

double ClassifierHead::forward(std::span<const double> features) const {
  return std::clamp(sigmoid(logit(features)), kProbabilityClamp, 1.0 - kProbabilityClamp);
}

double ClassifierHead::accumulate_gradient(std::span<const double> features, int label,
                                           ClassifierHead& grad) const {
  check_input(features);
  std::vector<double> h1, h2, out;
  dense(layers_[0], features, h1, true);
  dense(layers_[1], h1, h2, true);
  dense(layers_[2], h2, out, false);
  const double p = sigmoid(out[0]);
  const double y = static_cast<double>(label);

  // output layer: d(bce)/dz = p - y
  const double dz3 = p - y;
  auto& g3 = grad.layers_[2];
  for (std::size_t i = 0; i < h2.size(); ++i) g3.weights[i] += dz3 * h2[i];
  g3.bias[0] += dz3;

  std::vector<double> dz2(h2.size());
  for (std::size_t j = 0; j < h2.size(); ++j) {
    dz2[j] = h2[j] > 0.0 ? dz3 * layers_[2].weights[j] : 0.0;
  }
  auto& g2 = grad.layers_[1];
  for (std::size_t j = 0; j < h2.size(); ++j) {
    if (dz2[j] == 0.0) continue;
    double* row = g2.weights.data() + j * h1.size();
    for (std::size_t i = 0; i < h1.size(); ++i) row[i] += dz2[j] * h1[i];
    g2.bias[j] += dz2[j];
  }

  std::vector<double> dz1(h1.size(), 0.0);
  for (std::size_t j = 0; j < h2.size(); ++j) {
    if (dz2[j] == 0.0) continue;
    const double* w = layers_[1].weights.data() + j * h1.size();
    for (std::size_t i = 0; i < h1.size(); ++i) dz1[i] += dz2[j] * w[i];
  }
  auto& g1 = grad.layers_[0];
  for (std::size_t i = 0; i < h1.size(); ++i) {
    if (h1[i] <= 0.0) continue;
    double* row = g1.weights.data() + i * features.size();
    for (std::size_t k = 0; k < features.size(); ++k) row[k] += dz1[i] * features[k];
    g1.bias[i] += dz1[i];
  }

  return bce_loss(std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp), label);
}

std::size_t ClassifierHead::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

double& ClassifierHead::parameter(std::size_t index) {
  for (auto& l : layers_) {
    if (index < l.weights.size()) return l.weights[index];
    index -= l.weights.size();
    if (index < l.bias.size()) return l.bias[index];
    index -= l.bias.size();
  }
  fail(ErrorCode::InvalidArgument, "parameter index out of range");
}

double ClassifierHead::parameter(std::size_t index) const {
  return const_cast<ClassifierHead*>(this)->parameter(index);
}

bool ClassifierHead::all_finite() const noexcept {
  for (const auto& l : layers_) {
    for (double w : l.weights) if (!std::isfinite(w)) return false;
    for (double b : l.bias) if (!std::isfinite(b)) return false;
  }
  return true;
}

void ClassifierHead::set_zero() {
  for (auto& l : layers_) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

double bce_loss(double prediction, int label) {
  const double p = std::clamp(prediction, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::Validation, "epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::Validation, "learning_rate must be > 0");
  }
  if (batch_size < 1) fail(ErrorCode::Validation, "batch_size must be >= 1");
  if (optimizer == Optimizer::SgdMomentum && !(momentum >= 0.0 && momentum < 1.0)) {
    fail(ErrorCode::Validation, "momentum must lie in [0, 1)");
  }
}

EvalResult evaluate_examples(const ClassifierHead& head, std::span<const Example> examples) {
  if (examples.empty()) fail(ErrorCode::Validation, "cannot evaluate an empty set");
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& ex : examples) {
    const double p = head.forward(ex.features);
    if ((p >= 0.5 ? 1 : 0) == ex.label) ++correct;
    loss += bce_loss(p, ex.label);
  }
  const double n = static_cast<double>(examples.size());
  return {static_cast<double>(correct) / n, loss / n};
}

TrainReport train(ClassifierHead& head, std::span<const Example> dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) fail(ErrorCode::Validation, "cannot train on an empty set");

  TrainReport report;
  const auto positives = std::count_if(dataset.begin(), dataset.end(),
                                       [](const Example& e) { return e.label == 1; });
  report.single_class = positives == 0 || positives == static_cast<long>(dataset.size());

  Rng rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  ClassifierHead grad = head;
  ClassifierHead velocity = head;
  velocity.set_zero();
  const std::size_t n_params = head.parameter_count();
  const double mu = config.optimizer == Optimizer::SgdMomentum ? config.momentum : 0.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      grad.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = dataset[order[i]];
        head.accumulate_gradient(ex.features, ex.label, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = 0; k < n_params; ++k) {
        const double g = grad.parameter(k) * scale;
        if (!std::isfinite(g)) {
          throw TrainingDivergedError(epoch, "non-finite gradient in epoch " +
                                                 std::to_string(epoch));
        }
        double& v = velocity.parameter(k);
        v = mu * v - config.learning_rate * g;
        head.parameter(k) += v;
      }
    }
    if (!head.all_finite()) {
      throw TrainingDivergedError(epoch, "non-finite weights after epoch " +
                                             std::to_string(epoch));
    }
    report.epochs.push_back(evaluate_examples(head, dataset));
    if (on_epoch) on_epoch(epoch, report.epochs.back());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

std::optional<data::Label> known_label(const data::Sample& s) {
  return s.committed_label ? s.committed_label : s.ground_truth;
}

}  // namespace

std::vector<Prediction> predict_proba(const ClassifierHead& head,
                                      const FeatureExtractor& extractor,
                                      std::span<const data::Sample> samples) {
  if (extractor.output_channels() != head.inputs()) {
    fail(ErrorCode::Configuration, "extractor emits " +
                                       std::to_string(extractor.output_channels()) +
                                       " channels but head expects " +
                                       std::to_string(head.inputs()));
  }
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto features = extract_features(extractor, s);
    out.push_back({s.id, strategies::binary_prob_vector(head.forward(features))});
  }
  return out;
}

EvalResult evaluate(const ClassifierHead& head, const FeatureExtractor& extractor,
                    std::span<const data::Sample> samples) {
  if (samples.empty()) fail(ErrorCode::Validation, "cannot evaluate an empty test set");
  std::vector<Example> examples;
  examples.reserve(samples.size());
  for (const auto& s : samples) {
    const auto label = known_label(s);
    if (!label) fail(ErrorCode::Data, "test sample '" + s.id + "' has no label");
    examples.push_back({extract_features(extractor, s), data::label_value(*label)});
  }
  return evaluate_examples(head, examples);
}

double gradient_check(const ClassifierHead& head, std::span<const double> features, int label,
                      double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-4)) {
    fail(ErrorCode::InvalidArgument, "epsilon must lie in [1e-6, 1e-4]");
  }
  ClassifierHead analytic = head;
  analytic.set_zero();
  head.accumulate_gradient(features, label, analytic);

  const auto loss_at = [&](const ClassifierHead& h) {
    return bce_loss(h.forward(features), label);
  };
  ClassifierHead probe = head;
  double worst = 0.0;
  for (std::size_t k = 0; k < head.parameter_count(); ++k) {
    const double original = probe.parameter(k);
    probe.parameter(k) = original + epsilon;
    const double up = loss_at(probe);
    probe.parameter(k) = original - epsilon;
    const double down = loss_at(probe);
    probe.parameter(k) = original;

    const double numeric = (up - down) / (2.0 * epsilon);
    const double exact = analytic.parameter(k);
    const double rel = std::abs(exact - numeric) /
                       std::max(1e-8, std::abs(exact) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string head_to_json(const ClassifierHead& head) {
  json layers = json::array();
  for (const auto& l : head.layers()) {
    layers.push_back({{"inputs", l.inputs}, {"outputs", l.outputs},
                      {"weights", l.weights}, {"bias", l.bias}});
  }
  json j{{"format", "alearn-head"},
         {"version", 1},
         {"inputs", head.inputs()},
         {"hidden1", head.hidden1()},
         {"hidden2", head.hidden2()},
         {"seed", head.seed()},
         {"layers", std::move(layers)}};
  return j.dump();
}

ClassifierHead head_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    if (j.at("format") != "alearn-head" || j.at("version") != 1) {
      fail(ErrorCode::Data, "unsupported checkpoint format");
    }
    ClassifierHead head = ClassifierHead::initialized(
        j.at("inputs").get<std::size_t>(), j.at("hidden1").get<std::size_t>(),
        j.at("hidden2").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
    const auto& layers = j.at("layers");
    if (layers.size() != 3) fail(ErrorCode::Data, "checkpoint needs 3 layers");
    for (std::size_t i = 0; i < 3; ++i) {
      auto& l = head.layers()[i];
      auto weights = layers[i].at("weights").get<std::vector<double>>();
      auto bias = layers[i].at("bias").get<std::vector<double>>();
      if (weights.size() != l.weights.size() || bias.size() != l.bias.size()) {
        fail(ErrorCode::Data, "checkpoint layer " + std::to_string(i) + " shape mismatch");
      }
      l.weights = std::move(weights);
      l.bias = std::move(bias);
    }
    if (!head.all_finite()) fail(ErrorCode::Data, "checkpoint holds non-finite weights");
    return head;
  } catch (const json::exception& e) {
    fail(ErrorCode::Data, std::string("bad checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ClassifierHead& head, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << head_to_json(head);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint " + path.string());
}

ClassifierHead load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return head_from_json(buffer.str());
}

}  // namespace alearn::learner
