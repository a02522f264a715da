#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "epir/dnspt.hpp"
#include "epir/tensor.hpp"

namespace epir {

// Detached per-head matrices laid out as [batch, heads, rows, cols].
template <typename T>
struct HeadStack {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  std::span<const T> matrix(std::size_t b, std::size_t h) const {
    return {values.data() + (b * heads + h) * rows * cols, rows * cols};
  }
  T at(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
    return values[((b * heads + h) * rows + i) * cols + j];
  }
};

template <typename T>
struct ItalsLayer {
  std::size_t model_dim = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  Tensor<T> wq, wk, wv;  // [d, heads * head_dim]
  Tensor<T> wo, bo;      // [heads * head_dim, d], [d]
  Tensor<T> tau_raw;     // [1]; tau = softplus(tau_raw) + kTauFloor

  static constexpr double kTauFloor = 1e-6;

  ItalsLayer(std::size_t d, std::size_t heads, std::size_t head_dim, std::mt19937_64& rng);

  std::size_t inner_dim() const { return heads * head_dim; }
  Tensor<T> tau() const;
  void set_tau(double tau);
  void collect(std::vector<Parameter<T>>& out, const std::string& prefix) const;
};

template <typename T>
struct Ffn {
  Tensor<T> w1, b1;  // [d, 4d], [4d]
  Tensor<T> w2, b2;  // [4d, d], [d]

  Ffn(std::size_t d, std::size_t hidden, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(std::vector<Parameter<T>>& out, const std::string& prefix) const;
};

template <typename T>
struct TransformerBlock {
  Tensor<T> ln1_gamma, ln1_beta;
  ItalsLayer<T> attn;
  Tensor<T> ln2_gamma, ln2_beta;
  Ffn<T> ffn;

  TransformerBlock(std::size_t d, std::size_t heads, std::size_t head_dim, std::mt19937_64& rng);
  void collect(std::vector<Parameter<T>>& out, const std::string& prefix) const;
};

template <typename T>
struct AttentionResult {
  Tensor<T> out;          // [B, n, d]
  HeadStack<T> attention;  // [B, H, n, n], post-softmax
  HeadStack<T> keys;       // [B, H, n, head_dim]
};

template <typename T>
struct BlockOutput {
  TokenBatch<T> tokens;
  HeadStack<T> attention;  // at the block's input token count
  HeadStack<T> keys;
};

// Per-head raw scores Q K^T of shape [B, n, n], no temperature applied.
template <typename T>
std::vector<Tensor<T>> similarity_matrix(const Tensor<T>& x, const ItalsLayer<T>& layer);

// Diagonal of each trailing square matrix set to -inf.
template <typename T>
Tensor<T> apply_diag_mask(const Tensor<T>& scores);

// softmax(mask(Q K^T / tau)) V per head, heads concatenated and projected.
template <typename T>
AttentionResult<T> itals_attention(const Tensor<T>& x, const ItalsLayer<T>& layer);

// Pre-LN block. With first_block the attention sublayer has no residual.
template <typename T>
BlockOutput<T> transformer_block(const TokenBatch<T>& x, const TransformerBlock<T>& block, bool first_block);

// ITALS(LN(x)) + x, or without the residual when first_block.
template <typename T>
AttentionResult<T> attention_sublayer(const Tensor<T>& x, const TransformerBlock<T>& block, bool first_block);

// x + FFN(LN(x)).
template <typename T>
Tensor<T> ffn_sublayer(const Tensor<T>& x, const TransformerBlock<T>& block);

constexpr double kLayerNormEps = 1e-5;

}  // namespace epir
