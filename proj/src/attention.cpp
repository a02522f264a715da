#include "epir/attention.hpp"

#include <algorithm>
#include <cmath>

#include "epir/error.hpp"
#include "epir/init.hpp"
#include "epir/ops.hpp"

namespace epir {

namespace {

template <typename T>
void put_head(HeadStack<T>& stack, std::size_t h, const Tensor<T>& t) {
  auto d = t.data();
  const std::size_t block = stack.rows * stack.cols;
  for (std::size_t b = 0; b < stack.batch; ++b)
    std::copy_n(d.data() + b * block, block, stack.values.data() + (b * stack.heads + h) * block);
}

template <typename T>
void require_tokens(const Tensor<T>& x, const ItalsLayer<T>& layer) {
  if (x.rank() != 3 || x.dim(2) != layer.model_dim) {
    throw DimensionError("attention expects [B, n, " + std::to_string(layer.model_dim) + "], got " +
                         to_string(x.shape()));
  }
  if (x.dim(1) < 2) throw ContractError("attention needs at least 2 tokens, got " + std::to_string(x.dim(1)));
}

}  // namespace

template <typename T>
ItalsLayer<T>::ItalsLayer(std::size_t d, std::size_t h, std::size_t dh, std::mt19937_64& rng)
    : model_dim(d), heads(h), head_dim(dh) {
  if (d == 0 || h == 0 || dh == 0) throw ConfigError("attention dimensions must be positive");
  wq = init::xavier_uniform<T>(d, h * dh, rng);
  wk = init::xavier_uniform<T>(d, h * dh, rng);
  wv = init::xavier_uniform<T>(d, h * dh, rng);
  wo = init::xavier_uniform<T>(h * dh, d, rng);
  bo = init::constant<T>({d}, 0.0);
  tau_raw = init::constant<T>({1}, 0.0);
  set_tau(std::sqrt(static_cast<double>(dh)));
}

template <typename T>
Tensor<T> ItalsLayer<T>::tau() const {
  return add_scalar(softplus(tau_raw), static_cast<T>(kTauFloor));
}

template <typename T>
void ItalsLayer<T>::set_tau(double tau) {
  if (!(tau > kTauFloor)) throw ConfigError("tau must exceed " + std::to_string(kTauFloor));
  tau_raw.mutable_data()[0] = static_cast<T>(std::log(std::expm1(tau - kTauFloor)));
}

template <typename T>
void ItalsLayer<T>::collect(std::vector<Parameter<T>>& out, const std::string& prefix) const {
  out.push_back({prefix + "wq", wq});
  out.push_back({prefix + "wk", wk});
  out.push_back({prefix + "wv", wv});
  out.push_back({prefix + "wo", wo});
  out.push_back({prefix + "bo", bo});
  out.push_back({prefix + "tau_raw", tau_raw});
}

template <typename T>
Ffn<T>::Ffn(std::size_t d, std::size_t hidden, std::mt19937_64& rng) {
  w1 = init::xavier_uniform<T>(d, hidden, rng);
  b1 = init::constant<T>({hidden}, 0.0);
  w2 = init::xavier_uniform<T>(hidden, d, rng);
  b2 = init::constant<T>({d}, 0.0);
}

template <typename T>
Tensor<T> Ffn<T>::operator()(const Tensor<T>& x) const {
  return add(matmul(gelu(add(matmul(x, w1), b1)), w2), b2);
}

template <typename T>
void Ffn<T>::collect(std::vector<Parameter<T>>& out, const std::string& prefix) const {
  out.push_back({prefix + "w1", w1});
  out.push_back({prefix + "b1", b1});
  out.push_back({prefix + "w2", w2});
  out.push_back({prefix + "b2", b2});
}

template <typename T>
TransformerBlock<T>::TransformerBlock(std::size_t d, std::size_t heads, std::size_t head_dim, std::mt19937_64& rng)
    : ln1_gamma(init::constant<T>({d}, 1.0)),
      ln1_beta(init::constant<T>({d}, 0.0)),
      attn(d, heads, head_dim, rng),
      ln2_gamma(init::constant<T>({d}, 1.0)),
      ln2_beta(init::constant<T>({d}, 0.0)),
      ffn(d, 4 * d, rng) {}

template <typename T>
void TransformerBlock<T>::collect(std::vector<Parameter<T>>& out, const std::string& prefix) const {
  out.push_back({prefix + "ln1.gamma", ln1_gamma});
  out.push_back({prefix + "ln1.beta", ln1_beta});
  attn.collect(out, prefix + "attn.");
  out.push_back({prefix + "ln2.gamma", ln2_gamma});
  out.push_back({prefix + "ln2.beta", ln2_beta});
  ffn.collect(out, prefix + "ffn.");
}

template <typename T>
std::vector<Tensor<T>> similarity_matrix(const Tensor<T>& x, const ItalsLayer<T>& layer) {
  require_tokens(x, layer);
  const auto q = matmul(x, layer.wq);
  const auto k = matmul(x, layer.wk);
  std::vector<Tensor<T>> out;
  for (std::size_t h = 0; h < layer.heads; ++h) {
    const auto lo = h * layer.head_dim;
    const auto hi = lo + layer.head_dim;
    out.push_back(matmul(slice(q, 2, lo, hi), transpose(slice(k, 2, lo, hi))));
  }
  return out;
}

template <typename T>
Tensor<T> apply_diag_mask(const Tensor<T>& scores) {
  return mask_diagonal(scores);
}

template <typename T>
AttentionResult<T> itals_attention(const Tensor<T>& x, const ItalsLayer<T>& layer) {
  require_tokens(x, layer);
  const std::size_t B = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t H = layer.heads;
  const std::size_t dh = layer.head_dim;

  const auto q = matmul(x, layer.wq);
  const auto k = matmul(x, layer.wk);
  const auto v = matmul(x, layer.wv);
  const auto tau = layer.tau();

  AttentionResult<T> res;
  res.attention = {B, H, n, n, std::vector<T>(B * H * n * n)};
  res.keys = {B, H, n, dh, std::vector<T>(B * H * n * dh)};
  std::vector<Tensor<T>> heads;
  heads.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    const auto lo = h * dh;
    const auto kh = slice(k, 2, lo, lo + dh);
    auto scores = div(matmul(slice(q, 2, lo, lo + dh), transpose(kh)), tau);
    const auto a = softmax(apply_diag_mask(scores), -1);
    heads.push_back(matmul(a, slice(v, 2, lo, lo + dh)));
    put_head(res.attention, h, a);
    put_head(res.keys, h, kh);
  }
  const auto merged = H == 1 ? heads[0] : concat(heads, 2);
  res.out = add(matmul(merged, layer.wo), layer.bo);
  return res;
}

template <typename T>
AttentionResult<T> attention_sublayer(const Tensor<T>& x, const TransformerBlock<T>& block, bool first_block) {
  const T eps = static_cast<T>(kLayerNormEps);
  auto res = itals_attention(layer_norm(x, block.ln1_gamma, block.ln1_beta, eps), block.attn);
  if (!first_block) res.out = add(res.out, x);
  return res;
}

template <typename T>
Tensor<T> ffn_sublayer(const Tensor<T>& x, const TransformerBlock<T>& block) {
  const T eps = static_cast<T>(kLayerNormEps);
  return add(block.ffn(layer_norm(x, block.ln2_gamma, block.ln2_beta, eps)), x);
}

template <typename T>
BlockOutput<T> transformer_block(const TokenBatch<T>& x, const TransformerBlock<T>& block, bool first_block) {
  auto res = attention_sublayer(x.tokens, block, first_block);
  return {{ffn_sublayer(res.out, block), x.has_cls}, std::move(res.attention), std::move(res.keys)};
}

#define EPIR_INSTANTIATE_ATTENTION(T)                                                                  \
  template struct ItalsLayer<T>;                                                                       \
  template struct Ffn<T>;                                                                              \
  template struct TransformerBlock<T>;                                                                 \
  template std::vector<Tensor<T>> similarity_matrix(const Tensor<T>&, const ItalsLayer<T>&);           \
  template Tensor<T> apply_diag_mask(const Tensor<T>&);                                                \
  template AttentionResult<T> itals_attention(const Tensor<T>&, const ItalsLayer<T>&);                 \
  template AttentionResult<T> attention_sublayer(const Tensor<T>&, const TransformerBlock<T>&, bool);  \
  template Tensor<T> ffn_sublayer(const Tensor<T>&, const TransformerBlock<T>&);                       \
  template BlockOutput<T> transformer_block(const TokenBatch<T>&, const TransformerBlock<T>&, bool);

EPIR_INSTANTIATE_ATTENTION(float)
EPIR_INSTANTIATE_ATTENTION(double)

}  // namespace epir
