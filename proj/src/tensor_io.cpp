#include "epir/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "epir/error.hpp"

namespace epir {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'T', '1'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.insert(out.end(), bytes, bytes + sizeof(U));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw DataError("EPT1: truncated data");
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, in.data() + pos, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  pos += sizeof(U);
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

Ept1Header parse_header(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("EPT1: bad magic");
  }
  pos = 4;
  Ept1Header h;
  const auto code = get_le<std::uint8_t>(bytes, pos);
  if (code != 1 && code != 2) throw DataError("EPT1: unknown dtype code " + std::to_string(code));
  h.dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint8_t>(bytes, pos);
  if (rank == 0) throw DataError("EPT1: rank 0");
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto d = get_le<std::uint32_t>(bytes, pos);
    if (d == 0) throw DataError("EPT1: zero dimension");
    h.shape.push_back(d);
  }
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::vector<std::uint8_t> encode_ept1(const Shape& shape, DType dtype,
                                      std::span<const double> values) {
  if (shape.empty() || shape.size() > 255) throw DimensionError("EPT1: unsupported rank");
  if (numel(shape) != values.size()) throw DimensionError("EPT1: value count does not match shape");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : values) {
    if (dtype == DType::kFloat32)
      put_le<float>(out, static_cast<float>(v));
    else
      put_le<double>(out, v);
  }
  return out;
}

std::vector<double> decode_ept1(std::span<const std::uint8_t> bytes, Ept1Header* header) {
  std::size_t pos = 0;
  const Ept1Header h = parse_header(bytes, pos);
  const std::size_t n = numel(h.shape);
  const std::size_t width = h.dtype == DType::kFloat32 ? 4 : 8;
  if (bytes.size() - pos != n * width) throw DataError("EPT1: payload size mismatch");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = h.dtype == DType::kFloat32 ? static_cast<double>(get_le<float>(bytes, pos))
                                           : get_le<double>(bytes, pos);
  }
  if (header) *header = h;
  return values;
}

Ept1Header read_ept1_header(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  return parse_header(bytes, pos);
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
  auto d = tensor.data();
  std::vector<double> values(d.begin(), d.end());
  const auto bytes = encode_ept1(tensor.shape(), std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64,
                                 values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Ept1Header h;
  const auto values = decode_ept1(bytes, &h);
  return Tensor<T>(h.shape, std::vector<T>(values.begin(), values.end()));
}

template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace epir
