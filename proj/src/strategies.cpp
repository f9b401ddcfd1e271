#include "strategies.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "error.hpp"

namespace alearn::strategies {

namespace {

constexpr double kEntropyFloor = 1e-12;
constexpr double kSigmoidTolerance = 1e-9;

}  // namespace

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    fail(ErrorCode::Validation, "probability vector needs at least 2 classes");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const double v = probs_[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      std::ostringstream msg;
      msg << "probability entry " << i << " out of [0, 1]: " << v;
      fail(ErrorCode::Validation, msg.str());
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    std::ostringstream msg;
    msg << "probabilities sum to " << sum << ", expected 1";
    fail(ErrorCode::Validation, msg.str());
  }
}

std::string_view to_string(StrategyKind kind) noexcept {
  switch (kind) {
    case StrategyKind::LeastConfidence: return "least_confidence";
    case StrategyKind::Margin: return "margin";
    case StrategyKind::Entropy: return "entropy";
    case StrategyKind::Random: return "random";
  }
  return "unknown";
}

std::optional<StrategyKind> parse_strategy(std::string_view name) noexcept {
  for (auto kind : {StrategyKind::LeastConfidence, StrategyKind::Margin,
                    StrategyKind::Entropy, StrategyKind::Random}) {
    if (name == to_string(kind)) return kind;
  }
  return std::nullopt;
}

double score_least_confidence(const ProbVector& p) {
  const auto probs = p.probs();
  return 1.0 - *std::max_element(probs.begin(), probs.end());
}

double score_margin(const ProbVector& p) {
  double first = -1.0;
  double second = -1.0;
  for (double v : p.probs()) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return 1.0 - (first - second);
}

double score_entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.probs()) {
    if (v <= 0.0) continue;
    const double clamped = std::clamp(v, kEntropyFloor, 1.0);
    h -= clamped * std::log(clamped);
  }
  // -1 * log(1) yields -0.0
  return h <= 0.0 ? 0.0 : h;
}

double score(StrategyKind kind, const ProbVector& p) {
  switch (kind) {
    case StrategyKind::LeastConfidence: return score_least_confidence(p);
    case StrategyKind::Margin: return score_margin(p);
    case StrategyKind::Entropy: return score_entropy(p);
    case StrategyKind::Random: break;
  }
  fail(ErrorCode::InvalidArgument, "random strategy has no probability score");
}

std::vector<SampleIndex> select_batch(std::span<const ScoredSample> scores,
                                      std::size_t n) {
  if (n == 0) fail(ErrorCode::InvalidArgument, "batch size must be >= 1");
  if (n > scores.size()) {
    std::ostringstream msg;
    msg << "requested " << n << " samples from a pool of " << scores.size();
    fail(ErrorCode::InsufficientPool, msg.str());
  }
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) {
      fail(ErrorCode::Validation,
           "non-finite score for sample " + std::to_string(s.id));
    }
  }

  std::vector<ScoredSample> ranked(scores.begin(), scores.end());
  const auto more_informative = [](const ScoredSample& a,
                                   const ScoredSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<long>(n),
                    ranked.end(), more_informative);

  std::vector<SampleIndex> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ranked[i].id);
  return out;
}

ProbVector binary_prob_vector(double sigmoid_output) {
  if (!std::isfinite(sigmoid_output) || sigmoid_output < -kSigmoidTolerance ||
      sigmoid_output > 1.0 + kSigmoidTolerance) {
    std::ostringstream msg;
    msg << "sigmoid output out of [0, 1]: " << sigmoid_output;
    fail(ErrorCode::Validation, msg.str());
  }
  const double p = std::clamp(sigmoid_output, 0.0, 1.0);
  return ProbVector({p, 1.0 - p});
}

}  // namespace alearn::strategies
