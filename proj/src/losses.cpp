#include "epir/losses.hpp"

#include "epir/error.hpp"
#include "epir/ops.hpp"

namespace epir {

void ContrastiveConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("contrastive margin alpha must lie in [0, 1)");
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  return cross_entropy(logits, labels);
}

template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& y, const std::vector<std::size_t>& labels, const ContrastiveConfig& cfg) {
  cfg.validate();
  if (y.rank() != 2) throw DimensionError("contrastive loss expects [B, d], got " + to_string(y.shape()));
  const std::size_t B = y.dim(0);
  if (B == 0) throw ContractError("contrastive loss needs at least one embedding");
  if (labels.size() != B) throw ContractError("label count does not match the batch");
  std::vector<T> same(B * B);
  std::vector<T> diff(B * B);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      const bool s = labels[i] == labels[j];
      same[i * B + j] = s ? T(1) : T(0);
      diff[i * B + j] = s ? T(0) : T(1);
      positives += s;
    }
  const auto yn = l2_normalize_rows(y);
  const auto sim = matmul(yn, transpose(yn));
  const Tensor<T> pm(Shape{B, B}, std::move(same));
  const Tensor<T> nm(Shape{B, B}, std::move(diff));
  auto pos_term = sub(Tensor<T>::scalar(static_cast<T>(positives)), sum(mul(sim, pm)));
  auto neg_term = sum(mul(relu(add_scalar(sim, static_cast<T>(-cfg.alpha))), nm));
  return mul_scalar(add(pos_term, neg_term), T(1) / static_cast<T>(B * B));
}

template Tensor<float> cross_entropy_loss(const Tensor<float>&, const std::vector<std::size_t>&);
template Tensor<double> cross_entropy_loss(const Tensor<double>&, const std::vector<std::size_t>&);
template Tensor<float> contrastive_loss(const Tensor<float>&, const std::vector<std::size_t>&,
                                        const ContrastiveConfig&);
template Tensor<double> contrastive_loss(const Tensor<double>&, const std::vector<std::size_t>&,
                                         const ContrastiveConfig&);

}  // namespace epir
