#include "epir/cost.hpp"

#include <random>

#include "json.hpp"

namespace epir {

namespace {

struct BlockCost {
  std::uint64_t attention = 0;
  std::uint64_t ffn = 0;
};

BlockCost block_cost(std::uint64_t n, std::uint64_t m, std::uint64_t d, std::uint64_t heads, std::uint64_t inner,
                     bool first_block) {
  BlockCost c;
  c.attention = 5 * n * d                       // LN
                + 2 * 3 * n * d * inner         // Q, K, V
                + 2                              // tau
                + 2 * 2 * n * n * inner         // Q K^T and A V
                + 4 * n * n * heads             // 1/tau and softmax
                + 2 * n * inner * d + n * d     // output projection
                + (first_block ? 0 : n * d);    // residual
  c.ffn = 5 * m * d + 16 * m * d * d + 10 * m * d;  // LN, two layers, biases, GELU, residual
  return c;
}

}  // namespace

std::string CostReport::to_json() const {
  nlohmann::ordered_json j;
  j["param_count"] = param_count;
  j["flops_per_sample"] = flops_per_sample;
  j["attention_flops"] = attention_flops;
  j["ffn_flops"] = ffn_flops;
  nlohmann::ordered_json items = nlohmann::ordered_json::object();
  for (const auto& it : breakdown) items[it.stage] = it.flops;
  j["breakdown"] = items;
  j["tokens_per_block"] = tokens_per_block;
  return j.dump(2);
}

CostReport cost_report(const ModelConfig& config) {
  config.validate();
  CostReport r;
  r.param_count = EpirModel<float>(config, 0).parameter_count();

  const std::uint64_t d = static_cast<std::uint64_t>(config.tokenizer.model_dim);
  const std::uint64_t H = static_cast<std::uint64_t>(config.heads);
  const std::uint64_t inner = H * static_cast<std::uint64_t>(config.resolved_head_dim());
  const std::uint64_t N = static_cast<std::uint64_t>(config.tokenizer.num_patches());
  const std::uint64_t P = static_cast<std::uint64_t>(config.tokenizer.patch_dim());
  const std::uint64_t C = static_cast<std::uint64_t>(config.num_classes);
  const std::uint64_t k = static_cast<std::uint64_t>(config.integration.pairs_per_block);

  const std::uint64_t tokenizer = 5 * N * P + 2 * N * P * d + N * d + 5 * N * d + (N + 1) * d;
  BlockCost integ, extr, fin;
  std::uint64_t n = N + 1;
  bool first = !config.uniform_residual;
  for (int b = 0; b < config.integration.num_blocks; ++b) {
    r.tokens_per_block.push_back(n);
    const auto c = block_cost(n, n - k, d, H, inner, first);
    integ.attention += c.attention;
    integ.ffn += c.ffn;
    n -= k;
    first = false;
  }
  for (int b = 0; b < config.extractor.num_blocks_before_dtsm; ++b) {
    r.tokens_per_block.push_back(n);
    const auto c = block_cost(n, n, d, H, inner, first);
    extr.attention += c.attention;
    extr.ffn += c.ffn;
    first = false;
  }
  r.tokens_per_block.push_back(H + 1);
  fin = block_cost(H + 1, H + 1, d, H, inner, false);
  const std::uint64_t head = 2 * d * C + C;

  r.breakdown = {{"tokenizer", tokenizer},
                 {"integration_attention", integ.attention},
                 {"integration_ffn", integ.ffn},
                 {"extractor_attention", extr.attention},
                 {"extractor_ffn", extr.ffn},
                 {"final_attention", fin.attention},
                 {"final_ffn", fin.ffn},
                 {"head", head}};
  r.attention_flops = integ.attention + extr.attention + fin.attention;
  r.ffn_flops = integ.ffn + extr.ffn + fin.ffn;
  for (const auto& it : r.breakdown) r.flops_per_sample += it.flops;
  return r;
}

std::uint64_t instrumented_flops(const ModelConfig& config, std::uint64_t seed) {
  const EpirModel<float> model(config, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  const auto N = static_cast<std::size_t>(config.tokenizer.num_patches());
  const auto P = static_cast<std::size_t>(config.tokenizer.patch_dim());
  std::vector<float> values(N * P);
  for (auto& v : values) v = dist(rng);
  const Tensor<float> patches(Shape{1, N, P}, std::move(values));
  NoGradGuard guard;
  flops::Counter counter;
  model.forward(patches);
  return counter.total();
}

}  // namespace epir
