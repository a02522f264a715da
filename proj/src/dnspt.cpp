#include "epir/dnspt.hpp"

#include <cstdlib>

#include "epir/error.hpp"
#include "epir/init.hpp"
#include "epir/ops.hpp"

namespace epir {

void DnsptConfig::validate() const {
  if (input_size <= 0 || patch_size <= 0) throw ConfigError("input_size and patch_size must be positive");
  if (input_size % patch_size != 0) {
    throw ConfigError("patch_size " + std::to_string(patch_size) + " does not divide input_size " +
                      std::to_string(input_size));
  }
  const int s = resolved_shift();
  if (s <= 0 || s >= patch_size) {
    throw ConfigError("shift_offset must satisfy 0 < offset < patch_size (got " + std::to_string(s) + ")");
  }
  if (model_dim <= 0) throw ConfigError("model_dim must be positive");
}

template <typename T>
Tensor<T> diagonal_shift(const Tensor<T>& map, int offset, ShiftDirection direction) {
  const auto& s = map.shape();
  if (s.size() != 3 || s[1] != s[2]) throw DimensionError("diagonal_shift expects [C, S, S], got " + to_string(s));
  const int size = static_cast<int>(s[1]);
  if (std::abs(offset) >= size) {
    throw ConfigError("shift offset " + std::to_string(offset) + " must be smaller than the map size " +
                      std::to_string(size));
  }
  int sx = 0;
  int sy = 0;
  switch (direction) {
    case ShiftDirection::kRightUp: sx = offset; sy = -offset; break;
    case ShiftDirection::kLeftUp: sx = -offset; sy = -offset; break;
    case ShiftDirection::kLeftDown: sx = -offset; sy = offset; break;
    case ShiftDirection::kRightDown: sx = offset; sy = offset; break;
  }
  auto in = map.data();
  std::vector<T> out(in.size(), T(0));
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (std::size_t c = 0; c < s[0]; ++c)
    for (int y = 0; y < size; ++y) {
      const int src_y = y - sy;
      if (src_y < 0 || src_y >= size) continue;
      for (int x = 0; x < size; ++x) {
        const int src_x = x - sx;
        if (src_x < 0 || src_x >= size) continue;
        out[c * plane + static_cast<std::size_t>(y) * size + x] = in[c * plane + static_cast<std::size_t>(src_y) * size + src_x];
      }
    }
  return Tensor<T>(s, std::move(out));
}

template <typename T>
std::array<Tensor<T>, 4> diagonal_shifts(const Tensor<T>& map, int offset) {
  return {diagonal_shift(map, offset, ShiftDirection::kRightUp), diagonal_shift(map, offset, ShiftDirection::kLeftUp),
          diagonal_shift(map, offset, ShiftDirection::kLeftDown),
          diagonal_shift(map, offset, ShiftDirection::kRightDown)};
}

template <typename T>
Tensor<T> patch_batch(std::span<const Tensor<float>> maps, const DnsptConfig& config) {
  config.validate();
  if (maps.empty()) throw DimensionError("patch_batch needs at least one map");
  const auto S = static_cast<std::size_t>(config.input_size);
  const auto p = static_cast<std::size_t>(config.patch_size);
  const auto g = static_cast<std::size_t>(config.grid());
  const auto n = g * g;
  const auto pd = static_cast<std::size_t>(config.patch_dim());
  std::vector<T> out(maps.size() * n * pd);
  for (std::size_t b = 0; b < maps.size(); ++b) {
    if (maps[b].shape() != Shape{3, S, S}) {
      throw DimensionError("flow map has shape " + to_string(maps[b].shape()) + ", expected " +
                           to_string(Shape{3, S, S}));
    }
    const auto shifted = diagonal_shifts(maps[b], config.resolved_shift());
    const std::array<const Tensor<float>*, 5> stack{&maps[b], &shifted[0], &shifted[1], &shifted[2], &shifted[3]};
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx) {
        T* dst = out.data() + (b * n + gy * g + gx) * pd;
        std::size_t k = 0;
        for (const auto* m : stack) {
          auto d = m->data();
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t py = 0; py < p; ++py)
              for (std::size_t px = 0; px < p; ++px)
                dst[k++] = static_cast<T>(d[c * S * S + (gy * p + py) * S + gx * p + px]);
        }
      }
  }
  return Tensor<T>(Shape{maps.size(), n, pd}, std::move(out));
}

template <typename T>
DnsptTokenizer<T>::DnsptTokenizer(const DnsptConfig& cfg, std::mt19937_64& rng) : config(cfg) {
  config.validate();
  const auto pd = static_cast<std::size_t>(config.patch_dim());
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto n = static_cast<std::size_t>(config.num_patches());
  in_gamma = init::constant<T>({pd}, 1.0);
  in_beta = init::constant<T>({pd}, 0.0);
  proj_w = init::xavier_uniform<T>(pd, d, rng);
  proj_b = init::constant<T>({d}, 0.0);
  out_gamma = init::constant<T>({d}, 1.0);
  out_beta = init::constant<T>({d}, 0.0);
  cls = init::constant<T>({1, d}, 0.0);
  pos = init::normal<T>({n + 1, d}, 0.02, rng);
}

template <typename T>
TokenBatch<T> DnsptTokenizer<T>::tokenize(const Tensor<T>& patches) const {
  const auto pd = static_cast<std::size_t>(config.patch_dim());
  if (patches.rank() != 3 || patches.dim(2) != pd) {
    throw DimensionError("tokenize expects [B, N, " + std::to_string(pd) + "], got " + to_string(patches.shape()));
  }
  const T eps = static_cast<T>(1e-5);
  auto x = layer_norm(patches, in_gamma, in_beta, eps);
  x = add(matmul(x, proj_w), proj_b);
  x = layer_norm(x, out_gamma, out_beta, eps);
  return {x, false};
}

template <typename T>
void DnsptTokenizer<T>::collect(std::vector<Parameter<T>>& out, const std::string& prefix) const {
  out.push_back({prefix + "in_ln.gamma", in_gamma});
  out.push_back({prefix + "in_ln.beta", in_beta});
  out.push_back({prefix + "proj.weight", proj_w});
  out.push_back({prefix + "proj.bias", proj_b});
  out.push_back({prefix + "out_ln.gamma", out_gamma});
  out.push_back({prefix + "out_ln.beta", out_beta});
  out.push_back({prefix + "cls", cls});
  out.push_back({prefix + "pos", pos});
}

template <typename T>
TokenBatch<T> add_cls_and_pos(const TokenBatch<T>& tokens, const Tensor<T>& cls, const Tensor<T>& pos) {
  if (tokens.has_cls) throw ContractError("token batch already carries a class token");
  const auto B = tokens.batch();
  const auto n = tokens.count();
  const auto d = tokens.width();
  if (cls.numel() != d) throw DimensionError("class token width " + std::to_string(cls.numel()) + " != " + std::to_string(d));
  if (pos.shape() != Shape{n + 1, d}) {
    throw DimensionError("position embedding has shape " + to_string(pos.shape()) + ", expected " +
                         to_string(Shape{n + 1, d}));
  }
  auto c = broadcast_to(reshape(cls, Shape{1, d}), Shape{B, 1, d});
  auto x = concat<T>({c, tokens.tokens}, 1);
  return {add(x, pos), true};
}

template Tensor<float> diagonal_shift(const Tensor<float>&, int, ShiftDirection);
template Tensor<double> diagonal_shift(const Tensor<double>&, int, ShiftDirection);
template std::array<Tensor<float>, 4> diagonal_shifts(const Tensor<float>&, int);
template std::array<Tensor<double>, 4> diagonal_shifts(const Tensor<double>&, int);
template Tensor<float> patch_batch(std::span<const Tensor<float>>, const DnsptConfig&);
template Tensor<double> patch_batch(std::span<const Tensor<float>>, const DnsptConfig&);
template struct DnsptTokenizer<float>;
template struct DnsptTokenizer<double>;
template TokenBatch<float> add_cls_and_pos(const TokenBatch<float>&, const Tensor<float>&, const Tensor<float>&);
template TokenBatch<double> add_cls_and_pos(const TokenBatch<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace epir
