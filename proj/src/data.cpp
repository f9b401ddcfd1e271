#include "data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "features.hpp"
#include "rng.hpp"

namespace alearn::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Label label) noexcept {
  return label == Label::Defect ? "defect" : "normal";
}

std::optional<Label> parse_label(std::string_view name) noexcept {
  if (name == "defect") return Label::Defect;
  if (name == "normal") return Label::Normal;
  return std::nullopt;
}

void SynthParams::validate() const {
  const auto bad = [](const std::string& what) {
    fail(ErrorCode::Validation, "synthetic parameters: " + what);
  };
  if (height < 8 || width < 8) bad("image must be at least 8x8");
  if (!(defect_fraction >= 0.0 && defect_fraction <= 1.0)) bad("defect_fraction out of [0, 1]");
  if (!(base_min >= 0.0 && base_max <= 255.0 && base_min <= base_max)) {
    bad("base intensity band must lie in [0, 255]");
  }
  if (texture_amplitude < 0.0 || pixel_noise < 0.0) bad("noise amplitudes must be >= 0");
  if (texture_cell < 2) bad("texture_cell must be >= 2");
  if (voids_min < 1 || voids_max < voids_min) bad("need 1 <= voids_min <= voids_max");
  if (!(radius_min > 0.0 && radius_max >= radius_min)) bad("need 0 < radius_min <= radius_max");
  if (2.0 * radius_max >= static_cast<double>(std::min(height, width))) {
    bad("voids do not fit in the image");
  }
  if (!(contrast_min > 0.0 && contrast_max >= contrast_min && contrast_max <= 1.0)) {
    bad("need 0 < contrast_min <= contrast_max <= 1");
  }
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(DatasetManifest manifest, std::vector<Sample> samples)
    : manifest_(std::move(manifest)),
      samples_(std::move(samples)),
      mutex_(std::make_unique<std::mutex>()) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!index_.emplace(samples_[i].id, i).second) {
      fail(ErrorCode::Data, "duplicate sample id '" + samples_[i].id + "'");
    }
  }
}

Dataset::Dataset(Dataset&&) noexcept = default;
Dataset& Dataset::operator=(Dataset&&) noexcept = default;
Dataset::~Dataset() = default;

std::optional<std::size_t> Dataset::find(std::string_view id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms.count()));
  return buf;
}

json audit_to_json(const AuditRecord& r) {
  return json{{"sample_id", r.sample_id},
              {"label", std::string(to_string(r.label))},
              {"annotator", r.annotator},
              {"timestamp", r.timestamp},
              {"query_index", r.query_index}};
}

AuditRecord audit_from_json(const json& j) {
  AuditRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  const auto label = parse_label(j.at("label").get<std::string>());
  if (!label) fail(ErrorCode::Data, "audit record with unknown label for " + r.sample_id);
  r.label = *label;
  r.annotator = j.at("annotator").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.query_index = j.at("query_index").get<int>();
  return r;
}

}  // namespace

void Dataset::attach_label_store(const fs::path& path) {
  std::lock_guard lock(*mutex_);
  std::vector<AuditRecord> replayed;
  if (fs::exists(path)) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot read label store " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        replayed.push_back(audit_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        // a torn final line from an interrupted append is dropped
        if (in.peek() == std::char_traits<char>::eof()) break;
        fail(ErrorCode::Data, "label store line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  for (auto& s : samples_) s.committed_label.reset();
  for (const auto& r : replayed) {
    const auto it = index_.find(r.sample_id);
    if (it == index_.end()) {
      fail(ErrorCode::Data, "label store references unknown sample " + r.sample_id);
    }
    auto& sample = samples_[it->second];
    if (sample.committed_label) {
      fail(ErrorCode::Data, "label store holds two labels for " + r.sample_id);
    }
    sample.committed_label = r.label;
  }
  audit_ = std::move(replayed);
  label_store_ = path;
}

std::optional<fs::path> Dataset::label_store() const {
  std::lock_guard lock(*mutex_);
  return label_store_;
}

AuditRecord Dataset::commit_label(std::string_view id, Label label,
                                  std::string_view annotator, int query_index) {
  std::lock_guard lock(*mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) {
    fail(ErrorCode::NotFound, "unknown sample '" + std::string(id) + "'");
  }
  auto& sample = samples_[it->second];
  if (sample.committed_label) {
    fail(ErrorCode::Conflict, "sample '" + std::string(id) + "' is already labeled " +
                                  std::string(to_string(*sample.committed_label)));
  }
  AuditRecord record{std::string(id), label, std::string(annotator), utc_timestamp(),
                     query_index};
  if (label_store_) {
    std::ofstream out(*label_store_, std::ios::app);
    out << audit_to_json(record).dump() << '\n';
    out.flush();
    if (!out) fail(ErrorCode::Io, "cannot append to " + label_store_->string());
  }
  sample.committed_label = label;
  audit_.push_back(record);
  return record;
}

std::optional<Label> Dataset::committed_label(std::string_view id) const {
  std::lock_guard lock(*mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) {
    fail(ErrorCode::NotFound, "unknown sample '" + std::string(id) + "'");
  }
  return samples_[it->second].committed_label;
}

std::vector<AuditRecord> Dataset::audit_log() const {
  std::lock_guard lock(*mutex_);
  return audit_;
}

// ---------------------------------------------------------------------------
// Digest and manifest

namespace {

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001B3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

void fill_counts(DatasetManifest& m, std::span<const Sample> samples) {
  m.sample_count = samples.size();
  m.defect_count = m.normal_count = m.unlabeled_count = 0;
  for (const auto& s : samples) {
    if (!s.ground_truth) {
      ++m.unlabeled_count;
    } else if (*s.ground_truth == Label::Defect) {
      ++m.defect_count;
    } else {
      ++m.normal_count;
    }
  }
  m.digest = compute_digest(samples);
}

}  // namespace

std::string compute_digest(std::span<const Sample> samples) {
  Fnv1a h;
  h.u64(samples.size());
  for (const auto& s : samples) {
    h.str(s.id);
    h.u64(s.ground_truth ? static_cast<std::uint64_t>(*s.ground_truth) + 1 : 0);
    if (s.image) {
      h.u64(s.image->height);
      h.u64(s.image->width);
      h.bytes(s.image->pixels.data(), s.image->pixels.size());
    } else {
      h.u64(0);
    }
    if (s.features) {
      h.u64(s.features->size());
      h.bytes(s.features->data(), s.features->size() * sizeof(double));
    } else {
      h.u64(0);
    }
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

// Smooth value noise on a coarse lattice, interpolated with smoothstep.
class ValueNoise {
 public:
  ValueNoise(std::size_t height, std::size_t width, std::size_t cell, Rng& rng)
      : cell_(static_cast<double>(cell)),
        rows_(height / cell + 2),
        cols_(width / cell + 2),
        lattice_(rows_ * cols_) {
    for (auto& v : lattice_) v = rng.uniform(-1.0, 1.0);
  }

  double at(std::size_t y, std::size_t x) const {
    const double fy = static_cast<double>(y) / cell_;
    const double fx = static_cast<double>(x) / cell_;
    const auto y0 = static_cast<std::size_t>(fy);
    const auto x0 = static_cast<std::size_t>(fx);
    const double ty = smooth(fy - static_cast<double>(y0));
    const double tx = smooth(fx - static_cast<double>(x0));
    const double a = node(y0, x0) * (1 - tx) + node(y0, x0 + 1) * tx;
    const double b = node(y0 + 1, x0) * (1 - tx) + node(y0 + 1, x0 + 1) * tx;
    return a * (1 - ty) + b * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double node(std::size_t r, std::size_t c) const { return lattice_[r * cols_ + c]; }

  double cell_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> lattice_;
};

constexpr std::uint64_t kClassStream = 0xC1A55ULL;
constexpr std::uint64_t kVoidStream = 0x7015ULL << 32;

Sample render_synthetic(const SynthParams& p, std::size_t index, Label label) {
  Rng rng(mix_seed(p.seed, index));
  const double base = rng.uniform(p.base_min, p.base_max);
  const ValueNoise coarse(p.height, p.width, p.texture_cell * 2, rng);
  const ValueNoise fine(p.height, p.width, p.texture_cell, rng);

  std::vector<double> field(p.height * p.width);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      const double texture = (coarse.at(y, x) + 0.5 * fine.at(y, x)) / 1.5;
      field[y * p.width + x] =
          base + p.texture_amplitude * texture + p.pixel_noise * rng.normal();
    }
  }

  Sample s;
  char id[32];
  std::snprintf(id, sizeof id, "syn-%05zu", index);
  s.id = id;
  s.ground_truth = label;
  s.provenance = Provenance::Generated;

  if (label == Label::Defect) {
    Rng vrng(mix_seed(p.seed, kVoidStream + index));
    const std::size_t count = p.voids_min + vrng.index(p.voids_max - p.voids_min + 1);
    for (std::size_t k = 0; k < count; ++k) {
      Void v;
      v.radius = vrng.uniform(p.radius_min, p.radius_max);
      v.contrast = vrng.uniform(p.contrast_min, p.contrast_max);
      v.cy = vrng.uniform(v.radius, static_cast<double>(p.height) - 1 - v.radius);
      v.cx = vrng.uniform(v.radius, static_cast<double>(p.width) - 1 - v.radius);
      s.voids.push_back(v);
    }
  }

  GrayImage image(p.height, p.width);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      double value = field[y * p.width + x];
      if (p.render_voids) {
        double drop = 0.0;
        for (const auto& v : s.voids) {
          const double dy = static_cast<double>(y) - v.cy;
          const double dx = static_cast<double>(x) - v.cx;
          if (dy * dy + dx * dx <= v.radius * v.radius) drop = std::max(drop, v.contrast);
        }
        value *= 1.0 - drop;
      }
      image.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    }
  }
  s.image = std::move(image);
  return s;
}

}  // namespace

Dataset generate_synthetic(const SynthParams& params, std::size_t n) {
  params.validate();
  if (n < 2) fail(ErrorCode::Validation, "synthetic dataset needs n >= 2");

  const auto defects = static_cast<std::size_t>(
      std::llround(params.defect_fraction * static_cast<double>(n)));
  std::vector<Label> labels(n, Label::Normal);
  std::fill(labels.begin(), labels.begin() + static_cast<long>(defects), Label::Defect);
  Rng rng(mix_seed(params.seed, kClassStream));
  rng.shuffle(std::span<Label>(labels));

  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) samples.push_back(render_synthetic(params, i, labels[i]));

  DatasetManifest m;
  m.dataset_id = "synth-s" + std::to_string(params.seed) + "-n" + std::to_string(n);
  m.source = "synthetic";
  m.height = params.height;
  m.width = params.width;
  m.synth = params;
  fill_counts(m, samples);
  return Dataset(std::move(m), std::move(samples));
}

// ---------------------------------------------------------------------------
// Ingestion

IngestResult ingest_directory(const fs::path& root, const IngestOptions& options) {
  if (!fs::is_directory(root)) {
    fail(ErrorCode::NotFound, "not a directory: " + root.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::string> errors;
  std::vector<Sample> samples;
  for (const auto& file : files) {
    const std::string rel = fs::relative(file, root).generic_string();
    Sample s;
    s.id = rel;
    s.provenance = Provenance::Ingested;
    try {
      s.image = read_image(file);
    } catch (const Error& e) {
      errors.push_back(rel + ": " + e.what());
      continue;
    }
    if (options.labeling == Labeling::FromSubdirectories) {
      const auto slash = rel.find('/');
      if (slash != std::string::npos) s.ground_truth = parse_label(rel.substr(0, slash));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) {
    std::string msg = "no readable images under " + root.string();
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorCode::Data, msg);
  }

  std::size_t height = samples.front().image->height;
  std::size_t width = samples.front().image->width;
  if (options.resize && options.height > 0 && options.width > 0) {
    height = options.height;
    width = options.width;
  }
  std::vector<std::string> mismatched;
  for (auto& s : samples) {
    if (s.image->height == height && s.image->width == width) continue;
    if (options.resize) {
      s.image = resize_bilinear(*s.image, height, width);
    } else {
      mismatched.push_back(s.id + " (" + std::to_string(s.image->width) + "x" +
                           std::to_string(s.image->height) + ")");
    }
  }
  if (!mismatched.empty()) {
    std::string msg = "image dimensions differ from " + std::to_string(width) + "x" +
                      std::to_string(height) + " and resizing is off:";
    for (const auto& name : mismatched) msg += "\n  " + name;
    fail(ErrorCode::Validation, msg);
  }

  DatasetManifest m;
  m.source = "directory";
  m.ingest_path = fs::absolute(root).lexically_normal().string();
  m.height = height;
  m.width = width;
  fill_counts(m, samples);
  m.dataset_id = "dir-" + m.digest.substr(0, 12);
  return IngestResult{Dataset(std::move(m), std::move(samples)), std::move(errors)};
}

Dataset ingest_features(const fs::path& features_csv,
                        const std::optional<fs::path>& labels_csv) {
  const auto table = learner::load_feature_csv(features_csv);
  std::map<std::string, Label, std::less<>> labels;
  if (labels_csv) {
    std::ifstream in(*labels_csv);
    if (!in) fail(ErrorCode::Io, "cannot open " + labels_csv->string());
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (header) {
        header = false;
        if (line == "sample_id,label") continue;
      }
      const auto comma = line.find(',');
      const auto label = comma == std::string::npos ? std::nullopt
                                                    : parse_label(line.substr(comma + 1));
      if (!label) fail(ErrorCode::Data, "bad label row: " + line);
      labels[line.substr(0, comma)] = *label;
    }
  }

  std::vector<Sample> samples;
  for (const auto& id : table.ids()) {
    Sample s;
    s.id = id;
    s.features = *table.find(id);
    s.provenance = Provenance::Ingested;
    if (const auto it = labels.find(id); it != labels.end()) s.ground_truth = it->second;
    samples.push_back(std::move(s));
  }
  DatasetManifest m;
  m.source = "features";
  m.ingest_path = fs::absolute(features_csv).lexically_normal().string();
  fill_counts(m, samples);
  m.dataset_id = "feat-" + m.digest.substr(0, 12);
  return Dataset(std::move(m), std::move(samples));
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json synth_to_json(const SynthParams& p) {
  return json{{"height", p.height},           {"width", p.width},
              {"defect_fraction", p.defect_fraction},
              {"seed", p.seed},               {"base_min", p.base_min},
              {"base_max", p.base_max},       {"texture_amplitude", p.texture_amplitude},
              {"texture_cell", p.texture_cell}, {"pixel_noise", p.pixel_noise},
              {"voids_min", p.voids_min},     {"voids_max", p.voids_max},
              {"radius_min", p.radius_min},   {"radius_max", p.radius_max},
              {"contrast_min", p.contrast_min}, {"contrast_max", p.contrast_max},
              {"render_voids", p.render_voids}};
}

SynthParams synth_from_json(const json& j) {
  SynthParams p;
  p.height = j.value("height", p.height);
  p.width = j.value("width", p.width);
  p.defect_fraction = j.value("defect_fraction", p.defect_fraction);
  p.seed = j.value("seed", p.seed);
  p.base_min = j.value("base_min", p.base_min);
  p.base_max = j.value("base_max", p.base_max);
  p.texture_amplitude = j.value("texture_amplitude", p.texture_amplitude);
  p.texture_cell = j.value("texture_cell", p.texture_cell);
  p.pixel_noise = j.value("pixel_noise", p.pixel_noise);
  p.voids_min = j.value("voids_min", p.voids_min);
  p.voids_max = j.value("voids_max", p.voids_max);
  p.radius_min = j.value("radius_min", p.radius_min);
  p.radius_max = j.value("radius_max", p.radius_max);
  p.contrast_min = j.value("contrast_min", p.contrast_min);
  p.contrast_max = j.value("contrast_max", p.contrast_max);
  p.render_voids = j.value("render_voids", p.render_voids);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
}

std::string image_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%06zu.pgm", index);
  return buf;
}

json manifest_to_json(const DatasetManifest& m) {
  json j{{"format", "alearn-dataset"},
         {"version", 1},
         {"dataset_id", m.dataset_id},
         {"source", m.source},
         {"sample_count", m.sample_count},
         {"class_counts",
          {{"defect", m.defect_count}, {"normal", m.normal_count}, {"unlabeled", m.unlabeled_count}}},
         {"image_height", m.height},
         {"image_width", m.width},
         {"digest", m.digest}};
  if (m.synth) j["generator"] = synth_to_json(*m.synth);
  if (!m.ingest_path.empty()) j["ingest_path"] = m.ingest_path;
  return j;
}

}  // namespace

std::string synth_params_to_json(const SynthParams& params) {
  return synth_to_json(params).dump(2);
}

SynthParams synth_params_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("generator parameters are not valid JSON: ") +
                                    e.what());
  }
  if (!j.is_object()) fail(ErrorCode::Validation, "generator parameters must be an object");
  const auto known = synth_to_json(SynthParams{});
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::Validation, "unknown generator parameter '" + key + "'");
    const auto& ref = known[key];
    const bool ok = ref.is_number_unsigned() ? value.is_number_unsigned()
                    : ref.is_number()        ? value.is_number()
                                             : value.type() == ref.type();
    if (!ok) {
      fail(ErrorCode::Validation, "generator parameter '" + key + "' has the wrong type");
    }
  }
  SynthParams p;
  try {
    p = synth_from_json(j);
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("bad generator parameters: ") + e.what());
  }
  p.validate();
  return p;
}

std::string format_manifest(const DatasetManifest& manifest) {
  return manifest_to_json(manifest).dump(2);
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  const auto samples = dataset.samples();

  std::string lines;
  learner::FeatureTable features;
  bool any_features = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    json j{{"id", s.id},
           {"provenance", s.provenance == Provenance::Generated ? "generated" : "ingested"}};
    j["ground_truth"] = s.ground_truth ? json(std::string(to_string(*s.ground_truth))) : json();
    if (s.image) {
      const auto name = image_file_name(i);
      j["image"] = name;
      const auto bytes = encode_pgm(*s.image);
      write_text(dir / name, std::string(bytes.begin(), bytes.end()));
    }
    if (!s.voids.empty()) {
      json voids = json::array();
      for (const auto& v : s.voids) {
        voids.push_back({{"cy", v.cy}, {"cx", v.cx}, {"radius", v.radius}, {"contrast", v.contrast}});
      }
      j["voids"] = std::move(voids);
    }
    if (s.features) {
      if (!any_features) features = learner::FeatureTable(s.features->size());
      any_features = true;
      features.add(s.id, *s.features);
    }
    lines += j.dump() + '\n';
  }
  write_text(dir / "samples.jsonl", lines);
  if (any_features) learner::save_feature_csv(features, dir / "features.csv");
  write_text(dir / "manifest.json", manifest_to_json(dataset.manifest()).dump(2) + '\n');

  const auto store = dir / "labels.jsonl";
  const auto current = dataset.label_store();
  if (!current || fs::weakly_canonical(*current) != fs::weakly_canonical(store)) {
    std::string audit;
    for (const auto& r : dataset.audit_log()) audit += audit_to_json(r).dump() + '\n';
    write_text(store, audit);
  }
}

Dataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    fail(ErrorCode::NotFound, "no dataset manifest at " + manifest_path.string());
  }
  json mj;
  try {
    std::ifstream in(manifest_path);
    mj = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::Data, "bad manifest " + manifest_path.string() + ": " + e.what());
  }

  std::optional<learner::FeatureTable> features;
  if (fs::exists(dir / "features.csv")) features = learner::load_feature_csv(dir / "features.csv");

  std::vector<Sample> samples;
  try {
    std::ifstream in(dir / "samples.jsonl");
    if (!in) fail(ErrorCode::Io, "cannot read " + (dir / "samples.jsonl").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::string>();
      s.provenance = j.value("provenance", "generated") == "generated" ? Provenance::Generated
                                                                        : Provenance::Ingested;
      if (j.contains("ground_truth") && !j["ground_truth"].is_null()) {
        s.ground_truth = parse_label(j["ground_truth"].get<std::string>());
        if (!s.ground_truth) fail(ErrorCode::Data, "bad ground truth for " + s.id);
      }
      if (j.contains("image")) s.image = read_image(dir / j["image"].get<std::string>());
      if (j.contains("voids")) {
        for (const auto& v : j["voids"]) {
          s.voids.push_back({v.at("cy").get<double>(), v.at("cx").get<double>(),
                             v.at("radius").get<double>(), v.at("contrast").get<double>()});
        }
      }
      if (features) {
        if (const auto* row = features->find(s.id)) s.features = *row;
      }
      samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Data, "bad sample record in " + dir.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.dataset_id = mj.value("dataset_id", "");
  m.source = mj.value("source", "");
  m.height = mj.value("image_height", std::size_t{0});
  m.width = mj.value("image_width", std::size_t{0});
  m.ingest_path = mj.value("ingest_path", "");
  if (mj.contains("generator")) m.synth = synth_from_json(mj["generator"]);
  const std::string stored_digest = mj.value("digest", "");
  fill_counts(m, samples);
  if (m.digest != stored_digest) {
    fail(ErrorCode::Data, "dataset digest mismatch in " + dir.string() + ": manifest " +
                              stored_digest + ", contents " + m.digest);
  }
  if (m.sample_count != mj.value("sample_count", std::size_t{0})) {
    fail(ErrorCode::Data, "sample count mismatch in " + dir.string());
  }

  Dataset dataset(std::move(m), std::move(samples));
  dataset.attach_label_store(dir / "labels.jsonl");
  return dataset;
}

// ---------------------------------------------------------------------------
// Splitting

Split split(const Dataset& dataset, double test_fraction, std::uint64_t seed,
            bool stratified) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::Validation, "test_fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  Rng rng(seed);
  Split out;

  const auto take = [&](std::vector<std::uint32_t> ids, std::size_t n_test) {
    rng.shuffle(std::span<std::uint32_t>(ids));
    out.test.insert(out.test.end(), ids.begin(), ids.begin() + static_cast<long>(n_test));
    out.train.insert(out.train.end(), ids.begin() + static_cast<long>(n_test), ids.end());
  };

  if (!stratified) {
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(n)));
    if (n_test < 1 || n_test >= n) {
      fail(ErrorCode::Validation, "test_fraction leaves an empty train or test side");
    }
    std::vector<std::uint32_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::uint32_t>(i);
    take(std::move(ids), n_test);
  } else {
    std::vector<std::uint32_t> by_class[2];
    for (std::size_t i = 0; i < n; ++i) {
      const auto& gt = dataset.at(i).ground_truth;
      if (!gt) {
        fail(ErrorCode::Validation,
             "stratified split needs ground truth; missing for " + dataset.at(i).id);
      }
      by_class[label_value(*gt)].push_back(static_cast<std::uint32_t>(i));
    }
    for (auto& ids : by_class) {
      if (ids.empty()) continue;
      if (ids.size() < 2) {
        fail(ErrorCode::Validation, "class too small to stratify (" +
                                        std::to_string(ids.size()) + " sample)");
      }
      auto n_test = static_cast<std::size_t>(
          std::llround(test_fraction * static_cast<double>(ids.size())));
      n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
      take(std::move(ids), n_test);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace alearn::data
