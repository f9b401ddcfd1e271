#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alearn::learner {

// Per-sample feature vectors as exchanged in the `sample_id,f0,...,f{C-1}`
// CSV format. Row order is preserved.
class FeatureTable {
 public:
  explicit FeatureTable(std::size_t width = 0) : width_(width) {}

  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::span<const std::string> ids() const noexcept { return ids_; }

  void add(std::string id, std::vector<double> values);
  const std::vector<double>* find(std::string_view id) const;

 private:
  std::size_t width_;
  std::vector<std::string> ids_;
  std::map<std::string, std::vector<double>, std::less<>> rows_;
};

FeatureTable parse_feature_csv(std::string_view text);
FeatureTable load_feature_csv(const std::filesystem::path& path);
std::string format_feature_csv(const FeatureTable& table);
void save_feature_csv(const FeatureTable& table, const std::filesystem::path& path);

}  // namespace alearn::learner
