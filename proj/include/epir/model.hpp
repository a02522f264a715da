#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "epir/attention.hpp"
#include "epir/dnspt.hpp"
#include "epir/dtsm.hpp"
#include "epir/integration.hpp"

namespace epir {

struct ModelConfig {
  DnsptConfig tokenizer;
  int heads = 3;
  int head_dim = 0;  // 0 selects ceil(model_dim / heads)
  IntegrationConfig integration;
  ExtractorConfig extractor;
  bool uniform_residual = false;
  int num_classes = 3;

  int resolved_head_dim() const;
  std::size_t initial_tokens() const { return static_cast<std::size_t>(tokenizer.num_patches()) + 1; }
  // Token count (including cls) leaving each integration block.
  std::vector<std::size_t> token_schedule() const;
  std::size_t total_blocks() const;
  void validate() const;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;                               // [B, C]
  Tensor<T> cls_final;                            // [B, d]
  std::vector<std::vector<MergeTrace>> traces;    // [integration block][sample]
  std::vector<std::vector<std::size_t>> selected;  // [sample][head]
  std::vector<HeadStack<T>> attention;            // every block, in order
  std::size_t tokens_after_integration = 0;
};

template <typename T>
struct EpirModel {
  ModelConfig config;
  DnsptTokenizer<T> tokenizer;
  std::vector<TransformerBlock<T>> integration;
  std::vector<TransformerBlock<T>> extractor;
  TransformerBlock<T> final_block;
  Tensor<T> head_w;  // [d, C]
  Tensor<T> head_b;  // [C]

  EpirModel(const ModelConfig& cfg, std::uint64_t seed);
  EpirModel(const ModelConfig& cfg, std::mt19937_64&& rng);

  std::vector<Parameter<T>> parameters() const;
  std::size_t parameter_count() const;

  // patches: [B, N, 15 p^2] from patch_batch.
  ForwardResult<T> forward(const Tensor<T>& patches) const;

  // One EPT1 file per parameter, named after the parameter.
  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);
};

}  // namespace epir
