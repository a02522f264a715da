#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "epir/config.hpp"
#include "epir/reports.hpp"

namespace epir {

struct RunSummary {
  double uf1 = 0.0;
  double uar = 0.0;
  std::size_t samples = 0;
  std::size_t folds = 0;
  std::string metrics_json;
};

// Loads a manifest and applies the config's label map, if any.
SampleManifest load_run_manifest(const std::filesystem::path& manifest_path, const RunConfig& config,
                                 bool check_paths = true);

// Model settings for a given manifest (class count comes from the data).
ModelConfig model_for(const RunConfig& config, const SampleManifest& manifest);

CacheSummary run_cache(const SampleManifest& manifest, const RunConfig& config,
                       const std::filesystem::path& cache_dir);

// Full LOSO training. Writes config.txt, manifest.csv, run.json,
// metrics.json, confusion.csv, confusion_normalized.csv, predictions.csv,
// loss_curves.csv and weights/fold_<k>/ under run_dir.
RunSummary run_train(const std::filesystem::path& manifest_path, const RunConfig& config,
                     const std::filesystem::path& run_dir, const std::filesystem::path& cache_dir,
                     const LogFn& log = {});

// Re-evaluates every fold from the saved weights and writes
// eval_metrics.json.
RunSummary run_eval(const std::filesystem::path& run_dir);

// Applies one sweep value to the model settings. Throws ConfigError for
// values the architecture cannot realise.
void apply_sweep_value(RunConfig& config, const std::string& axis, double value);

// integration_rate -> pairs per block for the given settings.
int pairs_for_rate(const ModelConfig& model, double rate);

std::vector<SweepRow> run_sweep(const std::filesystem::path& manifest_path, const RunConfig& config,
                                const std::string& axis, const std::vector<double>& values,
                                const std::filesystem::path& cache_dir, const std::filesystem::path& csv_path,
                                const LogFn& log = {});

// Merge map of one sample. Uses the weights of the fold holding the sample
// out when run_dir is given, otherwise a freshly initialised model.
std::string run_visualize(const std::filesystem::path& manifest_path, const RunConfig& config,
                          const std::filesystem::path& cache_dir, const std::string& sample_id,
                          const std::optional<std::filesystem::path>& run_dir);

}  // namespace epir
