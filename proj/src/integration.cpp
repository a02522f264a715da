#include "epir/integration.hpp"

#include <cmath>

#include "epir/error.hpp"
#include "epir/ops.hpp"
#include "json.hpp"

namespace epir {

void IntegrationConfig::validate(std::size_t non_cls_tokens, std::size_t min_remaining) const {
  if (num_blocks < 0) throw ConfigError("integration_blocks must be non-negative");
  if (pairs_per_block < 0) throw ConfigError("pairs_per_block must be non-negative");
  if (!protect_cls) throw ConfigError("protect_cls=false is not supported: the class token never merges");
  std::size_t n = non_cls_tokens;
  const auto k = static_cast<std::size_t>(pairs_per_block);
  for (int b = 0; b < num_blocks; ++b) {
    if (k > n / 2) {
      throw ConfigError("integration block " + std::to_string(b + 1) + " cannot merge " + std::to_string(k) +
                        " pairs from " + std::to_string(n) + " tokens");
    }
    n -= k;
  }
  if (n < min_remaining) {
    throw ConfigError("only " + std::to_string(n) + " tokens remain after integration, need at least " +
                      std::to_string(min_remaining));
  }
}

HalfSplit split_halves(std::size_t n) {
  if (n < 2) throw ContractError("cannot split " + std::to_string(n) + " token(s) into two halves");
  return {(n + 1) / 2, n / 2};
}

SimilarityMatrix pair_similarity(const std::vector<std::vector<double>>& keys_t1,
                                 const std::vector<std::vector<double>>& keys_t2) {
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  SimilarityMatrix sim{keys_t1.size(), keys_t2.size(), std::vector<double>(keys_t1.size() * keys_t2.size())};
  std::vector<double> n2(keys_t2.size());
  for (std::size_t j = 0; j < keys_t2.size(); ++j) n2[j] = norm(keys_t2[j]);
  for (std::size_t i = 0; i < keys_t1.size(); ++i) {
    const double n1 = norm(keys_t1[i]);
    for (std::size_t j = 0; j < keys_t2.size(); ++j) {
      if (keys_t1[i].size() != keys_t2[j].size()) throw DimensionError("key vectors differ in length");
      double dot = 0.0;
      for (std::size_t c = 0; c < keys_t1[i].size(); ++c) dot += keys_t1[i][c] * keys_t2[j][c];
      sim.values[i * sim.cols + j] = (n1 == 0.0 || n2[j] == 0.0) ? -1.0 : dot / (n1 * n2[j]);
    }
  }
  return sim;
}

template <typename T>
std::vector<std::vector<double>> head_averaged_keys(const HeadStack<T>& keys, std::size_t b) {
  std::vector<std::vector<double>> out(keys.rows, std::vector<double>(keys.cols, 0.0));
  for (std::size_t h = 0; h < keys.heads; ++h)
    for (std::size_t i = 0; i < keys.rows; ++i)
      for (std::size_t c = 0; c < keys.cols; ++c) out[i][c] += static_cast<double>(keys.at(b, h, i, c));
  for (auto& row : out)
    for (auto& v : row) v /= static_cast<double>(keys.heads);
  return out;
}

std::vector<MergePair> select_top_pairs(const SimilarityMatrix& sim, std::size_t k) {
  if (k > std::min(sim.rows, sim.cols)) {
    throw ConfigError("cannot select " + std::to_string(k) + " pairs from a " + std::to_string(sim.rows) + "x" +
                      std::to_string(sim.cols) + " similarity table");
  }
  std::vector<bool> row_used(sim.rows, false);
  std::vector<bool> col_used(sim.cols, false);
  std::vector<MergePair> out;
  for (std::size_t step = 0; step < k; ++step) {
    bool found = false;
    MergePair best;
    for (std::size_t i = 0; i < sim.rows; ++i) {
      if (row_used[i]) continue;
      for (std::size_t j = 0; j < sim.cols; ++j) {
        if (col_used[j]) continue;
        const double s = sim.at(i, j);
        if (!found || s > best.similarity) {
          best = {i, j, s};
          found = true;
        }
      }
    }
    row_used[best.first] = true;
    col_used[best.second] = true;
    out.push_back(best);
  }
  return out;
}

MergeTrace MergeTrace::identity(std::size_t n) {
  MergeTrace t;
  t.tokens_before = t.tokens_after = n;
  t.survivor.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.survivor[i] = i;
  return t;
}

MergeTrace MergeTrace::from_pairs(std::size_t n, bool has_cls, std::vector<MergePair> pairs) {
  const std::size_t base = has_cls ? 1 : 0;
  if (n < base) throw ContractError("token count below class-token offset");
  const auto halves = split_halves(n - base);
  MergeTrace t;
  t.tokens_before = n;
  t.has_cls = has_cls;
  constexpr auto kUnset = static_cast<std::size_t>(-1);
  t.survivor.assign(n, kUnset);
  std::size_t next = 0;
  if (has_cls) t.survivor[0] = next++;
  for (const auto& p : pairs) {
    if (p.first >= halves.first || p.second >= halves.second) {
      throw ContractError("merge pair (" + std::to_string(p.first) + ", " + std::to_string(p.second) +
                          ") is out of range");
    }
    const std::size_t a = base + p.first;
    const std::size_t b = base + halves.first + p.second;
    if (t.survivor[a] != kUnset || t.survivor[b] != kUnset) {
      throw ContractError("merge pairs overlap at (" + std::to_string(p.first) + ", " + std::to_string(p.second) + ")");
    }
    t.survivor[a] = t.survivor[b] = next++;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (t.survivor[i] == kUnset) t.survivor[i] = next++;
  t.tokens_after = next;
  t.pairs = std::move(pairs);
  return t;
}

template <typename T>
TokenBatch<T> merge_pairs(const TokenBatch<T>& x, const std::vector<MergeTrace>& traces) {
  const std::size_t B = x.batch();
  const std::size_t n = x.count();
  if (traces.size() != B) throw ContractError("one merge trace per sample is required");
  RowMix<T> mix(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& t = traces[b];
    if (t.tokens_before != n || t.survivor.size() != n) {
      throw ContractError("merge trace covers " + std::to_string(t.tokens_before) + " tokens, batch has " +
                          std::to_string(n));
    }
    if (t.tokens_after != traces[0].tokens_after) throw ContractError("samples disagree on merged token count");
    if (t.has_cls != x.has_cls) throw ContractError("merge trace and token batch disagree on the class token");
    std::vector<std::vector<std::size_t>> groups(t.tokens_after);
    for (std::size_t i = 0; i < n; ++i) groups.at(t.survivor[i]).push_back(i);
    auto& rows = mix[b];
    rows.resize(t.tokens_after);
    for (std::size_t r = 0; r < groups.size(); ++r) {
      if (groups[r].empty()) throw ContractError("merge trace leaves output token " + std::to_string(r) + " empty");
      const T w = T(1) / static_cast<T>(groups[r].size());
      for (auto src : groups[r]) rows[r].emplace_back(src, w);
    }
  }
  return {mix_rows(x.tokens, mix), x.has_cls};
}

template <typename T>
IntegrationOutput<T> integration_block(const TokenBatch<T>& x, const TransformerBlock<T>& block, bool first_block,
                                       std::size_t pairs) {
  auto res = attention_sublayer(x.tokens, block, first_block);
  const std::size_t B = x.batch();
  const std::size_t n = x.count();
  IntegrationOutput<T> out;
  out.traces.reserve(B);
  Tensor<T> y = res.out;
  if (pairs == 0) {
    for (std::size_t b = 0; b < B; ++b) {
      out.traces.push_back(MergeTrace::identity(n));
      out.traces.back().has_cls = x.has_cls;
    }
  } else {
    const std::size_t base = x.has_cls ? 1 : 0;
    const auto halves = split_halves(n - base);
    for (std::size_t b = 0; b < B; ++b) {
      const auto keys = head_averaged_keys(res.keys, b);
      std::vector<std::vector<double>> t1(keys.begin() + base, keys.begin() + base + halves.first);
      std::vector<std::vector<double>> t2(keys.begin() + base + halves.first, keys.end());
      out.traces.push_back(MergeTrace::from_pairs(n, x.has_cls, select_top_pairs(pair_similarity(t1, t2), pairs)));
    }
    y = merge_pairs(TokenBatch<T>{y, x.has_cls}, out.traces).tokens;
  }
  out.block = {{ffn_sublayer(y, block), x.has_cls}, std::move(res.attention), std::move(res.keys)};
  return out;
}

std::string merge_traces_json(const std::vector<std::vector<MergeTrace>>& traces, std::size_t sample) {
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t l = 0; l < traces.size(); ++l) {
    const auto& t = traces[l].at(sample);
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : t.pairs) pairs.push_back({{"t1", p.first}, {"t2", p.second}, {"similarity", p.similarity}});
    blocks.push_back({{"block", l + 1},
                      {"tokens_before", t.tokens_before},
                      {"tokens_after", t.tokens_after},
                      {"pairs", pairs},
                      {"survivor", t.survivor}});
  }
  return blocks.dump(2);
}

template std::vector<std::vector<double>> head_averaged_keys(const HeadStack<float>&, std::size_t);
template std::vector<std::vector<double>> head_averaged_keys(const HeadStack<double>&, std::size_t);
template TokenBatch<float> merge_pairs(const TokenBatch<float>&, const std::vector<MergeTrace>&);
template TokenBatch<double> merge_pairs(const TokenBatch<double>&, const std::vector<MergeTrace>&);
template IntegrationOutput<float> integration_block(const TokenBatch<float>&, const TransformerBlock<float>&, bool,
                                                    std::size_t);
template IntegrationOutput<double> integration_block(const TokenBatch<double>&, const TransformerBlock<double>&, bool,
                                                     std::size_t);

}  // namespace epir
