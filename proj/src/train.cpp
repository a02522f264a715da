#include "epir/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "epir/error.hpp"
#include "epir/ops.hpp"

namespace epir {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

Adam::Adam(std::vector<Parameter<float>> params, const TrainConfig& cfg)
    : params_(std::move(params)), lr_(cfg.learning_rate), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const bool has = p.tensor.has_grad();
    auto grad = has ? p.tensor.grad() : std::span<const float>{};
    auto w = p.tensor.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? static_cast<double>(grad[i]) : 0.0;
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<float>(static_cast<double>(w[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<Fold> loso_split(const SampleManifest& manifest) {
  manifest.validate();
  std::vector<Fold> folds;
  for (const auto& subject : manifest.subjects()) {
    Fold f;
    f.subject = subject;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
      (manifest.records[i].subject_id == subject ? f.test : f.train).push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

Tensor<float> PatchedDataset::batch(std::span<const std::size_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * tokens * width);
  for (auto i : indices) out.insert(out.end(), patches.at(i).begin(), patches.at(i).end());
  return Tensor<float>(Shape{indices.size(), tokens, width}, std::move(out));
}

PatchedDataset load_patched(const SampleManifest& manifest, const FeatureConfig& features, const DnsptConfig& tokenizer,
                            const std::filesystem::path& cache_dir) {
  if (tokenizer.input_size != features.feature_size) {
    throw ConfigError("tokenizer input_size " + std::to_string(tokenizer.input_size) + " differs from feature size " +
                      std::to_string(features.feature_size));
  }
  PatchedDataset data;
  data.class_names = manifest.class_names;
  data.tokens = static_cast<std::size_t>(tokenizer.num_patches());
  data.width = static_cast<std::size_t>(tokenizer.patch_dim());
  for (const auto& r : manifest.records) {
    Tensor<float> map;
    try {
      map = load_feature(cache_dir, r.sample_id, features);
    } catch (const Error& e) {
      throw DataError("sample " + r.sample_id + ": " + e.what());
    }
    const std::array<Tensor<float>, 1> one{map};
    auto p = patch_batch<float>(one, tokenizer);
    data.patches.emplace_back(p.data().begin(), p.data().end());
    data.sample_ids.push_back(r.sample_id);
    data.subjects.push_back(r.subject_id);
    data.labels.push_back(r.label);
  }
  return data;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ static_cast<std::uint64_t>(fold)) ^ stream);
}

TrainedFold train_fold(const PatchedDataset& data, const std::vector<std::size_t>& train, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, const ContrastiveConfig& contrastive, std::uint64_t seed,
                       const LogFn& log) {
  cfg.validate();
  contrastive.validate();
  if (train.empty()) throw DataError("training set is empty");
  TrainedFold out{EpirModel<float>(model_cfg, fold_seed(seed, 0, 1)), {}};
  Adam adam(out.model.parameters(), cfg);
  std::mt19937_64 shuffle(fold_seed(seed, 0, 2));
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.size());
  std::vector<std::size_t> order = train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);
      adam.zero_grad();
      const auto fwd = out.model.forward(data.batch(idx));
      auto loss = add(cross_entropy_loss(fwd.logits, labels), contrastive_loss(fwd.cls_final, labels, contrastive));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("loss is not finite at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batches + 1));
      }
      loss.backward();
      adam.step();
      total += value;
      ++batches;
    }
    out.loss_curve.push_back(total / static_cast<double>(batches));
    if (log) log("epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(out.loss_curve.back()));
  }
  adam.zero_grad();
  return out;
}

std::vector<Prediction> evaluate_fold(const EpirModel<float>& model, const PatchedDataset& data,
                                      const std::vector<std::size_t>& test) {
  NoGradGuard guard;
  std::vector<Prediction> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    const std::span<const std::size_t> idx(test.data() + start, std::min(kChunk, test.size() - start));
    const auto fwd = model.forward(data.batch(idx));
    const auto logits = fwd.logits.data();
    const std::size_t C = fwd.logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::vector<double> row(logits.begin() + r * C, logits.begin() + (r + 1) * C);
      out.push_back({data.sample_ids[idx[r]], predict_class(row), data.labels[idx[r]]});
    }
  }
  return out;
}

ConfusionCounts pooled_counts(const std::vector<FoldResult>& folds, std::size_t classes) {
  ConfusionCounts counts(classes);
  for (const auto& f : folds) {
    std::vector<std::size_t> pred, truth;
    for (const auto& p : f.predictions) {
      pred.push_back(p.predicted);
      truth.push_back(p.truth);
    }
    confusion_accumulate(counts, pred, truth);
  }
  return counts;
}

LosoResult run_loso(const SampleManifest& manifest, const PatchedDataset& data, const ModelConfig& model_cfg,
                    const TrainConfig& cfg, const ContrastiveConfig& contrastive, const LosoOptions& options) {
  cfg.validate();
  model_cfg.validate();
  const auto folds = loso_split(manifest);
  std::vector<FoldResult> results(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= folds.size()) return;
      try {
        const auto& f = folds[k];
        LogFn log;
        if (options.log) {
          log = [&, k](const std::string& msg) {
            std::lock_guard lock(log_mutex);
            options.log("fold " + std::to_string(k + 1) + "/" + std::to_string(folds.size()) + " (" + f.subject +
                        "): " + msg);
          };
        }
        auto trained = train_fold(data, f.train, model_cfg, cfg, contrastive, fold_seed(cfg.seed, k, 0), log);
        if (options.weights_dir) trained.model.save(*options.weights_dir / ("fold_" + std::to_string(k)));
        results[k] = {f.subject, evaluate_fold(trained.model, data, f.test), std::move(trained.loss_curve)};
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };

  const std::size_t n_workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.workers, 1)), 1,
                                                        std::max<std::size_t>(folds.size(), 1));
  std::vector<std::thread> threads;
  for (std::size_t i = 1; i < n_workers; ++i) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  LosoResult res;
  res.counts = pooled_counts(results, manifest.class_names.size());
  res.folds = std::move(results);
  return res;
}

}  // namespace epir
