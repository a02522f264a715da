#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "epir/tensor.hpp"

namespace epir {

// "EPT1" container: magic, u8 dtype code, u8 rank, rank x u32 LE dims,
// then the little-endian IEEE-754 payload in row-major order.
enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

struct Ept1Header {
  DType dtype = DType::kFloat32;
  Shape shape;
};

std::vector<std::uint8_t> encode_ept1(const Shape& shape, DType dtype,
                                      std::span<const double> values);
// Decodes into doubles regardless of the stored dtype.
std::vector<double> decode_ept1(std::span<const std::uint8_t> bytes, Ept1Header* header);

Ept1Header read_ept1_header(const std::filesystem::path& path);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor);

// Loads any stored dtype and converts to T.
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace epir
