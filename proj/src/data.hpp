#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "image_io.hpp"

namespace alearn::data {

enum class Label { Normal = 0, Defect = 1 };

std::string_view to_string(Label label) noexcept;
std::optional<Label> parse_label(std::string_view name) noexcept;

// Binary target used by the learner: defect = 1.
inline int label_value(Label label) noexcept { return label == Label::Defect ? 1 : 0; }
inline Label flip(Label label) noexcept {
  return label == Label::Defect ? Label::Normal : Label::Defect;
}

enum class Provenance { Generated, Ingested };

// Generator metadata for one rendered low-emission disk.
struct Void {
  double cy = 0;
  double cx = 0;
  double radius = 0;
  double contrast = 0;  // fractional intensity drop inside the disk
};

struct Sample {
  std::string id;
  std::optional<GrayImage> image;
  std::optional<std::vector<double>> features;
  std::optional<Label> ground_truth;
  std::optional<Label> committed_label;
  Provenance provenance = Provenance::Generated;
  std::vector<Void> voids;

  bool has_pixels() const noexcept { return image.has_value(); }
};

struct SynthParams {
  std::size_t height = 64;
  std::size_t width = 64;
  double defect_fraction = 0.5;
  std::uint64_t seed = 7;

  // melt-pool background: base level in [base_min, base_max] plus smooth
  // value noise of the given amplitude and per-pixel Gaussian noise
  double base_min = 120.0;
  double base_max = 170.0;
  double texture_amplitude = 30.0;
  std::size_t texture_cell = 8;
  double pixel_noise = 6.0;

  std::size_t voids_min = 1;
  std::size_t voids_max = 2;
  double radius_min = 1.5;
  double radius_max = 3.5;
  double contrast_min = 0.18;
  double contrast_max = 0.45;

  // When false, defect samples keep their void metadata but the disks are not
  // painted, which yields the matching defect-free rendering.
  bool render_voids = true;

  void validate() const;
};

struct DatasetManifest {
  std::string dataset_id;
  std::string source;  // "synthetic", "directory" or "features"
  std::size_t sample_count = 0;
  std::size_t defect_count = 0;
  std::size_t normal_count = 0;
  std::size_t unlabeled_count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::optional<SynthParams> synth;
  std::string ingest_path;
  std::string digest;
};

struct AuditRecord {
  std::string sample_id;
  Label label = Label::Normal;
  std::string annotator;
  std::string timestamp;  // UTC, ISO-8601
  int query_index = 0;
};

class Dataset {
 public:
  Dataset(DatasetManifest manifest, std::vector<Sample> samples);
  Dataset(Dataset&&) noexcept;
  Dataset& operator=(Dataset&&) noexcept;
  ~Dataset();

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const std::string& id() const noexcept { return manifest_.dataset_id; }
  std::size_t size() const noexcept { return samples_.size(); }
  std::span<const Sample> samples() const noexcept { return samples_; }
  const Sample& at(std::size_t index) const { return samples_.at(index); }
  std::optional<std::size_t> find(std::string_view id) const;

  // Binds the append-only JSON-lines audit file and replays any records it
  // already holds.
  void attach_label_store(const std::filesystem::path& path);
  std::optional<std::filesystem::path> label_store() const;

  // Throws NotFound for unknown ids and Conflict when a label already exists.
  AuditRecord commit_label(std::string_view id, Label label,
                           std::string_view annotator, int query_index);
  std::optional<Label> committed_label(std::string_view id) const;
  std::vector<AuditRecord> audit_log() const;

 private:
  DatasetManifest manifest_;
  std::vector<Sample> samples_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<AuditRecord> audit_;
  std::optional<std::filesystem::path> label_store_;
  std::unique_ptr<std::mutex> mutex_;
};

Dataset generate_synthetic(const SynthParams& params, std::size_t n);

enum class Labeling { FromSubdirectories, Unlabeled };

struct IngestOptions {
  Labeling labeling = Labeling::FromSubdirectories;
  bool resize = false;
  // Target size when resizing; zero means "size of the first image".
  std::size_t height = 0;
  std::size_t width = 0;
};

struct IngestResult {
  Dataset dataset;
  std::vector<std::string> file_errors;
};

IngestResult ingest_directory(const std::filesystem::path& root,
                              const IngestOptions& options = {});

// Feature-only samples from a `sample_id,f0,...` CSV. Ground truth is taken
// from an optional `sample_id,label` CSV.
Dataset ingest_features(const std::filesystem::path& features_csv,
                        const std::optional<std::filesystem::path>& labels_csv = {});

std::string format_manifest(const DatasetManifest& manifest);

std::string synth_params_to_json(const SynthParams& params);
// Missing keys keep their defaults; unknown keys are validation errors.
SynthParams synth_params_from_json(std::string_view text);

std::string compute_digest(std::span<const Sample> samples);

// Layout: manifest.json, samples.jsonl, images/*.pgm, features.csv (when
// any sample carries features) and labels.jsonl (the audit log).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct Split {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> test;
};

Split split(const Dataset& dataset, double test_fraction, std::uint64_t seed,
            bool stratified);

}  // namespace alearn::data
