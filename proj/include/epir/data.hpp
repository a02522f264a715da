#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "epir/optical_flow.hpp"
#include "epir/tensor.hpp"

namespace epir {

struct SampleRecord {
  std::string sample_id;
  std::string subject_id;
  std::size_t label = 0;
  std::filesystem::path onset_path;
  std::filesystem::path apex_path;

  bool operator==(const SampleRecord&) const = default;
};

// Dataset description. Frame paths are stored as written in the CSV and
// resolved against `base_dir` when relative.
struct SampleManifest {
  std::vector<std::string> class_names;
  std::vector<SampleRecord> records;
  std::string protocol_tag;
  std::filesystem::path base_dir;

  // Distinct subject ids in lexicographic order.
  std::vector<std::string> subjects() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  // Checks class/subject counts, label range and duplicate ids.
  void validate() const;
};

// Manifest CSV:
//   # classes: a,b,c
//   # protocol: <tag>            (optional)
//   sample_id,subject_id,label,onset_path,apex_path
//   <rows; label is a class name>
SampleManifest load_manifest(const std::filesystem::path& path, bool check_paths = true);
void write_manifest(const std::filesystem::path& path, const SampleManifest& manifest);

// Ordered source -> target class renaming. Target class indices follow the
// order of first appearance.
struct LabelMap {
  std::vector<std::pair<std::string, std::string>> pairs;

  // `source=target` lines, '#' comments.
  static LabelMap load(const std::filesystem::path& path);
  static LabelMap identity(const std::vector<std::string>& classes);
  std::vector<std::string> target_classes() const;
};

SampleManifest apply_label_map(const SampleManifest& manifest, const LabelMap& map);

struct SyntheticSpec {
  int classes = 3;
  int subjects = 4;
  int samples_per_subject = 5;
  std::uint64_t seed = 7;
  int image_size = 64;
};

// Centre (pixels) of the displacement bump used for class `c` in an image of
// side `size`.
std::pair<double, double> synthetic_region_center(int c, int size);

// Writes frames/<id>_onset.pgm, frames/<id>_apex.pgm and manifest.csv under
// out_dir. Deterministic in (spec, seed).
SampleManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Parameters that determine a cached feature file.
struct FeatureConfig {
  FarnebackParams flow;
  int feature_size = 28;

  std::string canonical() const;
  std::string hash_hex() const;
};

struct CacheSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
  // (sample_id, message) in manifest order.
  std::vector<std::pair<std::string, std::string>> failures;
};

std::filesystem::path feature_path(const std::filesystem::path& dir, const std::string& sample_id,
                                   const FeatureConfig& config);

// Computes and stores one [3, S, S] EPT1 tensor per sample. Existing files
// for the same config hash are skipped; per-sample errors are collected.
CacheSummary cache_features(const SampleManifest& manifest, const FeatureConfig& config,
                            const std::filesystem::path& dir, int workers = 1);

Tensor<float> load_feature(const std::filesystem::path& dir, const std::string& sample_id,
                           const FeatureConfig& config);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);

}  // namespace epir
