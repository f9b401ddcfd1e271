#include "features.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace alearn::learner {

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(std::string_view cell, std::size_t line_no) {
  double value = 0.0;
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    fail(ErrorCode::Data, "feature CSV line " + std::to_string(line_no) +
                              ": bad number '" + std::string(cell) + "'");
  }
  return value;
}

}  // namespace

void FeatureTable::add(std::string id, std::vector<double> values) {
  if (values.size() != width_) {
    fail(ErrorCode::Data, "feature row for '" + id + "' has " +
                              std::to_string(values.size()) + " values, expected " +
                              std::to_string(width_));
  }
  if (rows_.count(id) != 0) fail(ErrorCode::Data, "duplicate feature row for '" + id + "'");
  ids_.push_back(id);
  rows_.emplace(std::move(id), std::move(values));
}

const std::vector<double>* FeatureTable::find(std::string_view id) const {
  const auto it = rows_.find(id);
  return it == rows_.end() ? nullptr : &it->second;
}

FeatureTable parse_feature_csv(std::string_view text) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::size_t line_no = 0;
  std::optional<FeatureTable> table;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const auto cells = split_csv_line(line);
    if (!table) {
      if (cells.size() < 2 || cells[0] != "sample_id") {
        fail(ErrorCode::Data, "feature CSV header must start with sample_id,f0");
      }
      for (std::size_t i = 1; i < cells.size(); ++i) {
        if (cells[i] != "f" + std::to_string(i - 1)) {
          fail(ErrorCode::Data, "feature CSV header column " + std::to_string(i) +
                                    " should be f" + std::to_string(i - 1));
        }
      }
      table.emplace(cells.size() - 1);
      continue;
    }
    if (cells.size() != table->width() + 1) {
      fail(ErrorCode::Data, "feature CSV line " + std::to_string(line_no) + " has " +
                                std::to_string(cells.size()) + " columns, expected " +
                                std::to_string(table->width() + 1));
    }
    std::vector<double> values;
    values.reserve(table->width());
    for (std::size_t i = 1; i < cells.size(); ++i) {
      values.push_back(parse_double(cells[i], line_no));
    }
    table->add(std::string(cells[0]), std::move(values));
  }
  if (!table) fail(ErrorCode::Data, "feature CSV is empty");
  return std::move(*table);
}

FeatureTable load_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open feature file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_feature_csv(buffer.str());
}

std::string format_feature_csv(const FeatureTable& table) {
  std::string out = "sample_id";
  for (std::size_t i = 0; i < table.width(); ++i) out += ",f" + std::to_string(i);
  out += '\n';
  char buf[64];
  for (const auto& id : table.ids()) {
    out += id;
    for (double v : *table.find(id)) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out += ',';
      out.append(buf, end);
    }
    out += '\n';
  }
  return out;
}

void save_feature_csv(const FeatureTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write feature file " + path.string());
  out << format_feature_csv(table);
}

}  // namespace alearn::learner
