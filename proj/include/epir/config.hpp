#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "epir/data.hpp"
#include "epir/losses.hpp"
#include "epir/model.hpp"
#include "epir/train.hpp"

namespace epir {

// Every tunable of the pipeline as one flat key=value document.
struct RunConfig {
  FeatureConfig features;
  ModelConfig model;
  TrainConfig train;
  ContrastiveConfig contrastive;
  int workers = 1;
  std::string label_map;          // optional class map, relative to base_dir
  std::filesystem::path base_dir;  // directory of the config file

  // Applies one key=value assignment; throws ConfigError on unknown keys
  // or malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void validate() const;

  // Sorted `key=value` lines with normalized values.
  std::string canonical() const;
  std::string hash_hex() const;

  static const std::vector<std::string>& keys();
};

// `key = value` lines, '#' starts a comment. Errors carry the line number.
RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig parse_config(const std::filesystem::path& path);

// Applies `key=value` overrides, e.g. from the command line.
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

}  // namespace epir
