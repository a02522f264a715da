#include "epir/dtsm.hpp"

#include <cmath>

#include "epir/error.hpp"
#include "epir/ops.hpp"

namespace epir {

void ExtractorConfig::validate() const {
  if (num_blocks_before_dtsm < 1) throw ConfigError("extractor_blocks must be at least 1");
}

SquareMatrix SquareMatrix::identity(std::size_t n) {
  SquareMatrix m{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

SquareMatrix multiply(const SquareMatrix& a, const SquareMatrix& b) {
  if (a.n != b.n) throw DimensionError("cannot multiply " + std::to_string(a.n) + "x" + std::to_string(a.n) + " by " +
                                       std::to_string(b.n) + "x" + std::to_string(b.n));
  SquareMatrix c{a.n, std::vector<double>(a.n * a.n, 0.0)};
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t k = 0; k < a.n; ++k) {
      const double aik = a.at(i, k);
      for (std::size_t j = 0; j < a.n; ++j) c.at(i, j) += aik * b.at(k, j);
    }
  return c;
}

template <typename T>
SquareMatrix head_matrix(const HeadStack<T>& stack, std::size_t b, std::size_t h) {
  if (stack.rows != stack.cols) throw DimensionError("attention stack is not square");
  auto src = stack.matrix(b, h);
  return {stack.rows, std::vector<double>(src.begin(), src.end())};
}

SquareMatrix project_through(const SquareMatrix& a, const MergeTrace& trace) {
  if (trace.tokens_before != a.n || trace.survivor.size() != a.n) {
    throw ContractError("merge trace covers " + std::to_string(trace.tokens_before) + " tokens, attention has " +
                        std::to_string(a.n));
  }
  const std::size_t m = trace.tokens_after;
  std::vector<double> count(m, 0.0);
  for (auto s : trace.survivor) count.at(s) += 1.0;
  SquareMatrix out{m, std::vector<double>(m * m, 0.0)};
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = 0; j < a.n; ++j)
      out.at(trace.survivor[i], trace.survivor[j]) += a.at(i, j) / count[trace.survivor[i]];
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += out.at(r, c);
    if (s > 0.0)
      for (std::size_t c = 0; c < m; ++c) out.at(r, c) /= s;
  }
  return out;
}

std::vector<std::vector<SquareMatrix>> project_attention(const AttentionRecord& record) {
  std::vector<std::vector<SquareMatrix>> out(record.size());
  for (std::size_t l = 0; l < record.size(); ++l) {
    for (const auto& a : record[l].heads) {
      auto m = a;
      for (std::size_t k = l; k < record.size(); ++k) m = project_through(m, record[k].trace);
      out[l].push_back(std::move(m));
    }
  }
  return out;
}

std::vector<SquareMatrix> attention_rollout(const std::vector<std::vector<SquareMatrix>>& layers) {
  if (layers.empty()) throw ContractError("attention rollout needs at least one layer");
  const std::size_t heads = layers[0].size();
  std::vector<SquareMatrix> out = layers[0];
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l].size() != heads) throw DimensionError("layers disagree on head count");
    for (std::size_t h = 0; h < heads; ++h) out[h] = multiply(layers[l][h], out[h]);
  }
  return out;
}

std::vector<std::size_t> select_indices(const std::vector<SquareMatrix>& rollout) {
  std::vector<std::size_t> picks;
  for (const auto& a : rollout) {
    if (a.n < 2) throw ConfigError("token selection needs at least one non-cls token");
    std::size_t best = 1;
    for (std::size_t j = 2; j < a.n; ++j)
      if (a.at(0, j) > a.at(0, best)) best = j;
    picks.push_back(best);
  }
  return picks;
}

template <typename T>
TokenBatch<T> select_tokens(const TokenBatch<T>& y, const std::vector<std::vector<std::size_t>>& indices) {
  if (!y.has_cls) throw ContractError("token selection requires a class token at index 0");
  const std::size_t B = y.batch();
  if (indices.size() != B) throw ContractError("one index list per sample is required");
  RowMix<T> mix(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& picks = indices[b];
    if (picks.size() != indices[0].size()) throw ContractError("samples disagree on selection size");
    if (y.count() < picks.size() + 1) {
      throw ConfigError("selecting " + std::to_string(picks.size()) + " tokens needs at least " +
                        std::to_string(picks.size() + 1) + " tokens, have " + std::to_string(y.count()));
    }
    mix[b].push_back({{0, T(1)}});
    for (auto j : picks) {
      if (j == 0 || j >= y.count()) throw ContractError("selected index " + std::to_string(j) + " is invalid");
      mix[b].push_back({{j, T(1)}});
    }
  }
  return {mix_rows(y.tokens, mix), true};
}

template <typename T>
HeadOutput<T> final_block_and_head(const TokenBatch<T>& selected, const TransformerBlock<T>& block,
                                   const Tensor<T>& head_w, const Tensor<T>& head_b) {
  auto out = transformer_block(selected, block, false);
  const std::size_t B = selected.batch();
  const std::size_t d = selected.width();
  auto cls = reshape(slice(out.tokens.tokens, 1, 0, 1), Shape{B, d});
  auto logits = add(matmul(cls, head_w), head_b);
  return {logits, cls, std::move(out.attention)};
}

std::vector<double> softmax_probabilities(std::span<const double> logits) {
  if (logits.empty()) return {};
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

std::size_t predict_class(std::span<const double> logits) {
  if (logits.empty()) throw ContractError("cannot predict from empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

template SquareMatrix head_matrix(const HeadStack<float>&, std::size_t, std::size_t);
template SquareMatrix head_matrix(const HeadStack<double>&, std::size_t, std::size_t);
template TokenBatch<float> select_tokens(const TokenBatch<float>&, const std::vector<std::vector<std::size_t>>&);
template TokenBatch<double> select_tokens(const TokenBatch<double>&, const std::vector<std::vector<std::size_t>>&);
template HeadOutput<float> final_block_and_head(const TokenBatch<float>&, const TransformerBlock<float>&,
                                                const Tensor<float>&, const Tensor<float>&);
template HeadOutput<double> final_block_and_head(const TokenBatch<double>&, const TransformerBlock<double>&,
                                                 const Tensor<double>&, const Tensor<double>&);

}  // namespace epir
