#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "epir/tensor.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() / ("epir_" + tag + "_" + std::to_string(stamp));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

template <typename T>
epir::Tensor<T> random_tensor(epir::Shape shape, std::mt19937_64& rng, bool requires_grad = false,
                              double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<T> v(epir::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return epir::Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

// Weighted sum with fixed pseudo-random weights, so that gradients of
// normalised outputs are not identically zero.
template <typename T>
epir::Tensor<T> probe_weights(const epir::Shape& shape, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return random_tensor<T>(shape, rng);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <typename T>
double max_abs_diff(const epir::Tensor<T>& a, const epir::Tensor<T>& b) {
  double worst = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(double(x[i]) - double(y[i])));
  return worst;
}

}  // namespace testutil

#include "epir/image.hpp"

namespace testutil {

// Smooth band-limited texture sampled at (x - dx, y - dy), so that a positive
// shift moves content right and down.
inline epir::GrayImage texture(int size, double dx, double dy, std::uint64_t seed = 21) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.08, 0.35);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  struct Wave {
    double fx, fy, ph;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 8; ++i) {
    const double a = freq(rng), b = freq(rng);
    waves.push_back({i % 2 ? a : -a, i % 3 ? b : -b, phase(rng)});
  }
  epir::GrayImage img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double s = 0.0;
      for (const auto& w : waves) s += std::sin(w.fx * (x - dx) + w.fy * (y - dy) + w.ph);
      img.at(x, y) = static_cast<std::uint8_t>(std::lround(127.5 + 15.0 * s));
    }
  return img;
}

}  // namespace testutil
