#pragma once

#include <span>
#include <vector>

#include "epir/attention.hpp"
#include "epir/integration.hpp"

namespace epir {

enum class RolloutScope { kExtractorOnly, kAllProjected };

struct ExtractorConfig {
  int num_blocks_before_dtsm = 6;
  RolloutScope rollout_scope = RolloutScope::kAllProjected;

  void validate() const;
};

struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  static SquareMatrix identity(std::size_t n);
  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * n + j]; }
};

SquareMatrix multiply(const SquareMatrix& a, const SquareMatrix& b);

// One block's per-head attention for one sample at the block's input size,
// with the merge performed inside that block.
struct LayerAttention {
  std::vector<SquareMatrix> heads;
  MergeTrace trace;
};

using AttentionRecord = std::vector<LayerAttention>;

template <typename T>
SquareMatrix head_matrix(const HeadStack<T>& stack, std::size_t b, std::size_t h);

// Pushes a matrix through one merge: rows of a merged group are averaged,
// columns summed, then rows renormalized.
SquareMatrix project_through(const SquareMatrix& a, const MergeTrace& trace);

// Carries every layer through its own merge and all later ones, so all
// matrices live on the token set leaving the last layer. Result is
// [layer][head].
std::vector<std::vector<SquareMatrix>> project_attention(const AttentionRecord& record);

// Per head: A_L ... A_2 A_1 (later layers on the left). Input is [layer][head].
std::vector<SquareMatrix> attention_rollout(const std::vector<std::vector<SquareMatrix>>& layers);

// Per head, the non-cls column with the largest value in the cls row; ties
// go to the lowest index.
std::vector<std::size_t> select_indices(const std::vector<SquareMatrix>& rollout);

// [cls, Y_{j_1}, ..., Y_{j_K}] per sample. indices[b] holds the K picks.
template <typename T>
TokenBatch<T> select_tokens(const TokenBatch<T>& y, const std::vector<std::vector<std::size_t>>& indices);

template <typename T>
struct HeadOutput {
  Tensor<T> logits;     // [B, C]
  Tensor<T> cls_final;  // [B, d]
  HeadStack<T> attention;
};

// One transformer block on the selected tokens, then FC on the class row.
template <typename T>
HeadOutput<T> final_block_and_head(const TokenBatch<T>& selected, const TransformerBlock<T>& block,
                                   const Tensor<T>& head_w, const Tensor<T>& head_b);

std::vector<double> softmax_probabilities(std::span<const double> logits);
// Index of the largest logit, lowest index on ties.
std::size_t predict_class(std::span<const double> logits);

}  // namespace epir
