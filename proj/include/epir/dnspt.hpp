#pragma once

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "epir/tensor.hpp"

namespace epir {

struct DnsptConfig {
  int input_size = 28;
  int patch_size = 7;
  int shift_offset = 0;  // 0 selects patch_size / 2
  int model_dim = 128;

  int resolved_shift() const { return shift_offset > 0 ? shift_offset : patch_size / 2; }
  int grid() const { return input_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  // Flattened length of one patch across the five stacked maps.
  int patch_dim() const { return 15 * patch_size * patch_size; }
  void validate() const;
};

enum class ShiftDirection { kRightUp, kLeftUp, kLeftDown, kRightDown };

// Translates every channel of a [C, S, S] map by `offset` pixels along the
// diagonal; vacated pixels are zero and content leaving the frame is cropped.
// Negative offsets move the opposite way.
template <typename T>
Tensor<T> diagonal_shift(const Tensor<T>& map, int offset, ShiftDirection direction);

// The four diagonal copies in the order right-up, left-up, left-down, right-down.
template <typename T>
std::array<Tensor<T>, 4> diagonal_shifts(const Tensor<T>& map, int offset);

// Stacks [V; four shifts] channel-wise and cuts it into non-overlapping
// p x p patches: [B, N, 15 p^2] for a batch of [3, S, S] maps. Rows are in
// raster order of the patch grid.
template <typename T>
Tensor<T> patch_batch(std::span<const Tensor<float>> maps, const DnsptConfig& config);

// Tokens of shape [B, n, d]; when has_cls the class token is row 0.
template <typename T>
struct TokenBatch {
  Tensor<T> tokens;
  bool has_cls = false;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t count() const { return tokens.dim(1); }
  std::size_t width() const { return tokens.dim(2); }
};

template <typename T>
struct DnsptTokenizer {
  DnsptConfig config;
  Tensor<T> in_gamma, in_beta;    // LN over the flattened patch
  Tensor<T> proj_w, proj_b;       // [15 p^2, d], [d]
  Tensor<T> out_gamma, out_beta;  // LN over d
  Tensor<T> cls;                  // [1, d]
  Tensor<T> pos;                  // [N + 1, d]

  DnsptTokenizer(const DnsptConfig& cfg, std::mt19937_64& rng);

  // LN -> linear -> LN on [B, N, 15 p^2] patches.
  TokenBatch<T> tokenize(const Tensor<T>& patches) const;
  void collect(std::vector<Parameter<T>>& out, const std::string& prefix) const;
};

// [cls; tokens] + pos with cls and pos broadcast over the batch.
template <typename T>
TokenBatch<T> add_cls_and_pos(const TokenBatch<T>& tokens, const Tensor<T>& cls, const Tensor<T>& pos);

}  // namespace epir
