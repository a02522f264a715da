#pragma once

#include <cmath>
#include <random>

#include "epir/tensor.hpp"

namespace epir::init {

template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<T> v(fan_in * fan_out);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(Shape{fan_in, fan_out}, std::move(v), true);
}

template <typename T>
Tensor<T> normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant(Shape shape, double value) {
  return Tensor<T>::full(std::move(shape), static_cast<T>(value), true);
}

}  // namespace epir::init
