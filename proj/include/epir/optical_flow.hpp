#pragma once

#include <array>
#include <vector>

#include "epir/image.hpp"
#include "epir/tensor.hpp"

namespace epir {

struct FarnebackParams {
  int pyramid_levels = 3;
  double pyramid_scale = 0.5;
  int window_size = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.2;

  // Throws ConfigError when an invariant is broken.
  void validate() const;
};

// Single-channel floating-point plane, row-major.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0);

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct FlowPlanes {
  Plane u;  // horizontal displacement, pixels
  Plane v;  // vertical displacement, pixels
};

// Three-channel (u, v, strain) feature map, each channel min-max scaled to
// [0, 1]. `degenerate[c]` is set when channel c was constant and zeroed.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::vector<float> strain;
  std::array<bool, 3> degenerate{false, false, false};

  bool has_warning() const { return degenerate[0] || degenerate[1] || degenerate[2]; }
  // Shape [3, height, width], channel order (u, v, strain).
  Tensor<float> to_tensor() const;
};

// Dense flow such that apex(x + u, y + v) ~ onset(x, y).
FlowPlanes farneback_flow(const GrayImage& onset, const GrayImage& apex,
                          const FarnebackParams& params);

// sqrt(ux^2 + vy^2 + 0.5 * (uy + vx)^2) with central differences in the
// interior and one-sided differences on the border.
Plane optical_strain(const Plane& u, const Plane& v);

// Bilinear resize with corner-aligned sampling grids.
Plane resize_bilinear(const Plane& src, int width, int height);

FlowField assemble_flow_feature(const Plane& u, const Plane& v, const Plane& strain, int out_size);

// farneback_flow -> optical_strain -> assemble_flow_feature.
FlowField compute_flow_feature(const GrayImage& onset, const GrayImage& apex,
                               const FarnebackParams& params, int out_size);

}  // namespace epir
