#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epir/data.hpp"
#include "epir/losses.hpp"
#include "epir/metrics.hpp"
#include "epir/model.hpp"

namespace epir {

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 5e-5;
  int batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

class Adam {
 public:
  Adam(std::vector<Parameter<float>> params, const TrainConfig& cfg);

  // Applies one update from the accumulated gradients. A parameter without
  // a gradient is treated as having a zero gradient.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter<float>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct Fold {
  std::string subject;
  std::vector<std::size_t> train;  // indices into the manifest records
  std::vector<std::size_t> test;
};

// One fold per subject in lexicographic subject order.
std::vector<Fold> loso_split(const SampleManifest& manifest);

// Patch tensors for every manifest record, computed once from the cache.
struct PatchedDataset {
  std::size_t tokens = 0;
  std::size_t width = 0;
  std::vector<std::string> sample_ids;
  std::vector<std::string> subjects;
  std::vector<std::size_t> labels;
  std::vector<std::vector<float>> patches;  // [tokens * width] each
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  Tensor<float> batch(std::span<const std::size_t> indices) const;
};

PatchedDataset load_patched(const SampleManifest& manifest, const FeatureConfig& features, const DnsptConfig& tokenizer,
                            const std::filesystem::path& cache_dir);

struct Prediction {
  std::string sample_id;
  std::size_t predicted = 0;
  std::size_t truth = 0;
};

struct FoldResult {
  std::string held_out_subject;
  std::vector<Prediction> predictions;
  std::vector<double> train_loss_curve;
};

struct TrainedFold {
  EpirModel<float> model;
  std::vector<double> loss_curve;
};

using LogFn = std::function<void(const std::string&)>;

TrainedFold train_fold(const PatchedDataset& data, const std::vector<std::size_t>& train, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, const ContrastiveConfig& contrastive, std::uint64_t seed,
                       const LogFn& log = {});

std::vector<Prediction> evaluate_fold(const EpirModel<float>& model, const PatchedDataset& data,
                                      const std::vector<std::size_t>& test);

// Fold seeds are a fixed function of (global seed, fold index).
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold, std::uint64_t stream);

struct LosoOptions {
  int workers = 1;
  std::optional<std::filesystem::path> weights_dir;  // one sub-directory per fold
  LogFn log;
};

struct LosoResult {
  std::vector<FoldResult> folds;  // in loso_split order
  ConfusionCounts counts;
};

LosoResult run_loso(const SampleManifest& manifest, const PatchedDataset& data, const ModelConfig& model_cfg,
                    const TrainConfig& cfg, const ContrastiveConfig& contrastive, const LosoOptions& options);

ConfusionCounts pooled_counts(const std::vector<FoldResult>& folds, std::size_t classes);

}  // namespace epir
