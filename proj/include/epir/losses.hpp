#pragma once

#include <vector>

#include "epir/tensor.hpp"

namespace epir {

struct ContrastiveConfig {
  double alpha = 0.4;

  void validate() const;
};

// Mean negative log-likelihood over the batch.
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

// Margin contrastive loss over L2-normalized rows of y [B, d]:
//   (1/B^2) sum_i [ sum_{same} (1 - s_ij) + sum_{different} max(s_ij - alpha, 0) ]
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& y, const std::vector<std::size_t>& labels, const ContrastiveConfig& cfg);

}  // namespace epir
