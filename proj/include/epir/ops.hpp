#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "epir/tensor.hpp"

namespace epir {

// Batched matrix product. `a` is [..., m, k]; `b` is either [k, n] (shared
// across the leading dims of `a`) or [..., k, n] with the same leading dims.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

// Binary elementwise ops. `b` must have the same shape as `a`, a suffix of
// it (broadcast over leading axes), or a single element.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

// Full reductions to a [1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Prepends leading axes so that x.shape() becomes a suffix of `shape`.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

// Numerically stable softmax along `axis`. -inf entries map to exactly 0.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

// Normalizes over the last axis, then applies gamma * x + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps);

// Sets the diagonal of the trailing square matrices to -inf. The diagonal
// receives no gradient.
template <typename T>
Tensor<T> mask_diagonal(const Tensor<T>& x);

// Sparse row recombination for [B, n, d] tensors: output row r of batch b is
// sum over (src, w) in mix[b][r] of w * x[b, src]. Used for token merging,
// reordering and gathering.
template <typename T>
using RowMix = std::vector<std::vector<std::vector<std::pair<std::size_t, T>>>>;

template <typename T>
Tensor<T> mix_rows(const Tensor<T>& x, const RowMix<T>& mix);

// Divides each row of a [B, d] tensor by its Euclidean norm.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x);

// Mean negative log-likelihood of `labels` under softmax(logits), logits [B, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

}  // namespace epir
