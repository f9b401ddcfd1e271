#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "features.hpp"
#include "strategies.hpp"

namespace alearn::learner {

// H x W x C activations, channel-fastest.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
};

// Per-channel spatial mean.
std::vector<double> gap2d(const FeatureMap& fm);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::size_t output_channels() const = 0;
  virtual FeatureMap extract(const data::Sample& sample) const = 0;
  virtual std::string describe() const = 0;
};

// Box-averaged downsample, emitted as a 1 x 1 x (H*W) map in [0, 1].
class RawDownsampleExtractor final : public FeatureExtractor {
 public:
  RawDownsampleExtractor(std::size_t height, std::size_t width);
  std::size_t output_channels() const override { return height_ * width_; }
  FeatureMap extract(const data::Sample& sample) const override;
  std::string describe() const override;

 private:
  std::size_t height_;
  std::size_t width_;
};

// Frozen bank of seeded, zero-mean, unit-norm 3x3 filters with edge-replicate
// padding, stride 2 and a thresholded ReLU. Even filters are random (edge-like),
// odd filters are centre-surround dark-spot detectors (blob-like).
class FixedConvExtractor final : public FeatureExtractor {
 public:
  static constexpr double kResponseThreshold = 0.1;
  static constexpr std::uint64_t kDefaultSeed = 0xF17E5ULL;
  static constexpr std::size_t kDefaultFilters = 16;

  explicit FixedConvExtractor(std::uint64_t seed = kDefaultSeed,
                              std::size_t filters = kDefaultFilters,
                              std::size_t stride = 2);

  std::size_t output_channels() const override { return filters_.size(); }
  FeatureMap extract(const data::Sample& sample) const override;
  std::string describe() const override;

  // Applies the bank to an intensity field already scaled to [0, 1].
  FeatureMap convolve(std::span<const double> field, std::size_t height,
                      std::size_t width) const;

  const std::vector<std::array<double, 9>>& filters() const noexcept { return filters_; }

 private:
  std::uint64_t seed_;
  std::size_t stride_;
  std::vector<std::array<double, 9>> filters_;
  std::vector<double> bias_;
};

// Looks up exported feature vectors by sample id; missing ids are data errors.
class PrecomputedExtractor final : public FeatureExtractor {
 public:
  explicit PrecomputedExtractor(FeatureTable table);
  std::size_t output_channels() const override { return table_.width(); }
  FeatureMap extract(const data::Sample& sample) const override;
  std::string describe() const override;

 private:
  FeatureTable table_;
};

// Uses the feature vector stored on each sample.
class SampleFeaturesExtractor final : public FeatureExtractor {
 public:
  explicit SampleFeaturesExtractor(std::size_t channels) : channels_(channels) {}
  std::size_t output_channels() const override { return channels_; }
  FeatureMap extract(const data::Sample& sample) const override;
  std::string describe() const override;

 private:
  std::size_t channels_;
};

// Per-channel affine rescaling to zero mean and a target std, fitted on a set
// of pooled feature vectors.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // target / std; target for constant channels

  static FeatureScaler fit(std::span<const std::vector<double>> rows, double target_std = 1.0);
  void apply(std::vector<double>& row) const;
};

// Extractor followed by GAP.
std::vector<double> extract_features(const FeatureExtractor& extractor,
                                     const data::Sample& sample);

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out)
      : inputs(in), outputs(out), weights(in * out, 0.0), bias(out, 0.0) {}

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

inline constexpr double kProbabilityClamp = 1e-7;

// Dense(C -> d1, ReLU) -> Dense(d1 -> d2, ReLU) -> Dense(d2 -> 1, sigmoid).
class ClassifierHead {
 public:
  static constexpr std::size_t kDefaultHidden1 = 64;
  static constexpr std::size_t kDefaultHidden2 = 16;

  ClassifierHead() = default;
  // All-zero weights.
  ClassifierHead(std::size_t inputs, std::size_t hidden1, std::size_t hidden2);

  // Glorot-uniform weights, zero biases.
  static ClassifierHead initialized(std::size_t inputs, std::size_t hidden1,
                                    std::size_t hidden2, std::uint64_t seed);

  std::size_t inputs() const noexcept { return layers_[0].inputs; }
  std::size_t hidden1() const noexcept { return layers_[0].outputs; }
  std::size_t hidden2() const noexcept { return layers_[1].outputs; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::array<DenseLayer, 3>& layers() noexcept { return layers_; }
  const std::array<DenseLayer, 3>& layers() const noexcept { return layers_; }

  double logit(std::span<const double> features) const;
  // Sigmoid probability of "defect", clamped into [1e-7, 1 - 1e-7].
  double forward(std::span<const double> features) const;

  // Adds d(bce)/d(parameters) for one example into `grad` (same shape) and
  // returns the loss.
  double accumulate_gradient(std::span<const double> features, int label,
                             ClassifierHead& grad) const;

  std::size_t parameter_count() const noexcept;
  // Flat view: layer by layer, weights then bias.
  double& parameter(std::size_t index);
  double parameter(std::size_t index) const;
  bool all_finite() const noexcept;

  void set_zero();

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;

 private:
  void check_input(std::span<const double> features) const;

  std::array<DenseLayer, 3> layers_;
  std::uint64_t seed_ = 0;
};

double bce_loss(double prediction, int label);

enum class Optimizer { Sgd, SgdMomentum };

struct TrainConfig {
  int epochs = 25;
  double learning_rate = 0.01;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::SgdMomentum;
  double momentum = 0.9;

  void validate() const;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

struct Example {
  std::vector<double> features;
  int label = 0;
};

struct TrainReport {
  std::vector<EvalResult> epochs;  // train-set metrics after each epoch
  bool single_class = false;
};

// Optional per-epoch hook, called after the epoch's train metrics are known.
using EpochCallback = std::function<void(int epoch, const EvalResult& train)>;

// Mini-batch SGD on mean BCE. Throws TrainingDivergedError when a gradient or
// weight becomes non-finite.
TrainReport train(ClassifierHead& head, std::span<const Example> dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

EvalResult evaluate_examples(const ClassifierHead& head, std::span<const Example> examples);

struct Prediction {
  std::string sample_id;
  strategies::ProbVector probs;
};

std::vector<Prediction> predict_proba(const ClassifierHead& head,
                                      const FeatureExtractor& extractor,
                                      std::span<const data::Sample> samples);

// Uses committed labels first, then ground truth; unlabeled samples are errors.
EvalResult evaluate(const ClassifierHead& head, const FeatureExtractor& extractor,
                    std::span<const data::Sample> samples);

// Max relative error between backprop and central differences over every
// parameter.
double gradient_check(const ClassifierHead& head, std::span<const double> features,
                      int label, double epsilon);

std::string head_to_json(const ClassifierHead& head);
ClassifierHead head_from_json(const std::string& text);
void save_checkpoint(const ClassifierHead& head, const std::filesystem::path& path);
ClassifierHead load_checkpoint(const std::filesystem::path& path);

}  // namespace alearn::learner
