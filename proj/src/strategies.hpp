#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alearn::strategies {

// Class-probability vector. Construction validates range and normalization,
// so every scoring function can assume a well-formed distribution.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-6;

  explicit ProbVector(std::vector<double> probs);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

 private:
  std::vector<double> probs_;
};

enum class StrategyKind { LeastConfidence, Margin, Entropy, Random };

std::string_view to_string(StrategyKind kind) noexcept;
std::optional<StrategyKind> parse_strategy(std::string_view name) noexcept;

using SampleIndex = std::uint32_t;

struct ScoredSample {
  SampleIndex id;
  double score;  // higher = more informative
};

// 1 - max_y p(y).
double score_least_confidence(const ProbVector& p);

// 1 - (p(y1) - p(y2)) over the two most probable classes, so that the
// smallest margin gets the largest score.
double score_margin(const ProbVector& p);

// Shannon entropy in nats, with 0 * log 0 taken as 0.
double score_entropy(const ProbVector& p);

// Dispatches the three uncertainty strategies. Random has no deterministic
// score and is rejected here; the engine draws its scores from a seeded stream.
double score(StrategyKind kind, const ProbVector& p);

// The n highest-scoring ids, ordered by descending score then ascending id.
// Throws InsufficientPool when n exceeds the pool.
std::vector<SampleIndex> select_batch(std::span<const ScoredSample> scores,
                                      std::size_t n);

// Maps a sigmoid output onto [p, 1 - p]; class 0 is "defect".
ProbVector binary_prob_vector(double sigmoid_output);

}  // namespace alearn::strategies
