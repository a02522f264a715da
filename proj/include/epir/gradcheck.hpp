#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "epir/error.hpp"
#include "epir/tensor.hpp"

namespace epir {

// Compares reverse-mode gradients of a scalar function against central
// differences. Returns max over every parameter element of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
template <typename F>
double grad_check(F&& f, std::vector<Tensor<double>> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> out = f();
  if (out.numel() != 1) {
    throw ContractError("grad_check needs a scalar-valued function, got shape " +
                        to_string(out.shape()));
  }
  out.backward();

  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double up = 0.0;
      double down = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        up = f().item();
        values[i] = saved - h;
        down = f().item();
      }
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace epir
