#pragma once

#include <string>
#include <utility>
#include <vector>

#include "epir/attention.hpp"

namespace epir {

struct IntegrationConfig {
  int num_blocks = 6;
  int pairs_per_block = 1;
  bool protect_cls = true;

  // Throws ConfigError unless every block can merge and at least
  // `min_remaining` non-cls tokens are left afterwards.
  void validate(std::size_t non_cls_tokens, std::size_t min_remaining) const;
};

struct HalfSplit {
  std::size_t first = 0;
  std::size_t second = 0;
};

// First ceil(n/2) tokens form t1, the rest t2.
HalfSplit split_halves(std::size_t n);

// Row-major |t1| x |t2| similarity table.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

// Cosine similarity between key vectors; a zero-norm key scores -1
// against everything.
SimilarityMatrix pair_similarity(const std::vector<std::vector<double>>& keys_t1,
                                 const std::vector<std::vector<double>>& keys_t2);

// Head-averaged key vector of every token of sample b.
template <typename T>
std::vector<std::vector<double>> head_averaged_keys(const HeadStack<T>& keys, std::size_t b);

struct MergePair {
  std::size_t first = 0;   // index within t1
  std::size_t second = 0;  // index within t2
  double similarity = 0.0;
};

// Greedy one-to-one matching of the k highest cells; ties go to the lower
// t1 index, then the lower t2 index.
std::vector<MergePair> select_top_pairs(const SimilarityMatrix& sim, std::size_t k);

// Merge bookkeeping for one sample in one block. Indices include the class
// token at 0 when present.
struct MergeTrace {
  std::size_t tokens_before = 0;
  std::size_t tokens_after = 0;
  bool has_cls = true;
  std::vector<MergePair> pairs;
  std::vector<std::size_t> survivor;  // old index -> new index

  static MergeTrace identity(std::size_t n);
  // Builds the survivor map: cls, one merged token per pair in list order,
  // then the untouched tokens in their original order.
  static MergeTrace from_pairs(std::size_t n, bool has_cls, std::vector<MergePair> pairs);
};

// Replaces each traced pair by its mean. traces[b] belongs to sample b.
template <typename T>
TokenBatch<T> merge_pairs(const TokenBatch<T>& x, const std::vector<MergeTrace>& traces);

template <typename T>
struct IntegrationOutput {
  BlockOutput<T> block;  // attention and keys at the pre-merge size
  std::vector<MergeTrace> traces;
};

// LN -> ITALS (+ residual unless first_block) -> merge -> LN -> FFN (+ residual).
template <typename T>
IntegrationOutput<T> integration_block(const TokenBatch<T>& x, const TransformerBlock<T>& block, bool first_block,
                                       std::size_t pairs);

std::string merge_traces_json(const std::vector<std::vector<MergeTrace>>& traces, std::size_t sample);

}  // namespace epir
