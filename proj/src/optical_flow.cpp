#include "epir/optical_flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "epir/error.hpp"

namespace epir {

void FarnebackParams::validate() const {
  if (pyramid_levels < 1) throw ConfigError("flow pyramid_levels must be >= 1");
  if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0))
    throw ConfigError("flow pyramid_scale must lie in (0, 1)");
  if (window_size < 3 || window_size % 2 == 0)
    throw ConfigError("flow window_size must be an odd integer >= 3");
  if (iterations < 1) throw ConfigError("flow iterations must be >= 1");
  if (poly_n < 1 || poly_n % 2 == 0) throw ConfigError("flow poly_n must be a positive odd integer");
  if (!(poly_sigma > 0.0)) throw ConfigError("flow poly_sigma must be positive");
}

Plane::Plane(int w, int h, double fill)
    : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

namespace {

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

// Bilinear sample with replicated borders.
double sample(const Plane& p, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(p.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(p.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, p.width - 1);
  const int y1 = std::min(y0 + 1, p.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  return (1 - fy) * ((1 - fx) * p.at(x0, y0) + fx * p.at(x1, y0)) +
         fy * ((1 - fx) * p.at(x0, y1) + fx * p.at(x1, y1));
}

std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (auto& v : k) v /= s;
  return k;
}

Plane blur(const Plane& src, int radius, double sigma) {
  const auto k = gaussian_kernel(radius, sigma);
  Plane tmp(src.width, src.height);
  Plane out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * src.at(clampi(x + i, 0, src.width - 1), y);
      tmp.at(x, y) = acc;
    }
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(x, clampi(y + i, 0, src.height - 1));
      out.at(x, y) = acc;
    }
  return out;
}

// Resample with pixel-centre alignment, used for pyramid construction.
Plane resample_centers(const Plane& src, int width, int height) {
  Plane out(width, height);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(x, y) = sample(src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

// Solves the 6x6 system in place (Gauss-Jordan with partial pivoting).
void invert6(std::array<std::array<double, 6>, 6>& m) {
  std::array<std::array<double, 12>, 6> aug{};
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) aug[i][j] = m[i][j];
    aug[i][6 + i] = 1.0;
  }
  for (int c = 0; c < 6; ++c) {
    int piv = c;
    for (int r = c + 1; r < 6; ++r)
      if (std::abs(aug[r][c]) > std::abs(aug[piv][c])) piv = r;
    std::swap(aug[c], aug[piv]);
    const double d = aug[c][c];
    for (auto& v : aug[c]) v /= d;
    for (int r = 0; r < 6; ++r) {
      if (r == c) continue;
      const double f = aug[r][c];
      for (int j = 0; j < 12; ++j) aug[r][j] -= f * aug[c][j];
    }
  }
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) m[i][j] = aug[i][6 + j];
}

// Per-pixel quadratic model f(p + w) ~ c + b.w + w^T A w, fitted by
// Gaussian-weighted least squares over a (2n+1)^2 window.
struct PolyCoeffs {
  Plane bx, by, axx, ayy, axy;  // axy multiplies x*y (off-diagonal of A is axy / 2)
};

PolyCoeffs poly_expand(const Plane& img, int n, double sigma) {
  const int size = 2 * n + 1;
  std::vector<std::array<double, 6>> basis;
  std::vector<double> weight;
  std::array<std::array<double, 6>, 6> gram{};
  for (int dy = -n; dy <= n; ++dy)
    for (int dx = -n; dx <= n; ++dx) {
      const std::array<double, 6> phi{1.0, double(dx), double(dy), double(dx * dx), double(dy * dy),
                                      double(dx * dy)};
      const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      basis.push_back(phi);
      weight.push_back(w);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) gram[i][j] += w * phi[i] * phi[j];
    }
  invert6(gram);
  // Dual kernels for coefficients 1..5 (the constant term is unused).
  std::array<std::vector<double>, 5> kernels;
  for (int c = 0; c < 5; ++c) {
    kernels[c].resize(basis.size());
    for (std::size_t t = 0; t < basis.size(); ++t) {
      double v = 0;
      for (int j = 0; j < 6; ++j) v += gram[c + 1][j] * basis[t][j];
      kernels[c][t] = v * weight[t];
    }
  }

  PolyCoeffs out{Plane(img.width, img.height), Plane(img.width, img.height), Plane(img.width, img.height),
                 Plane(img.width, img.height), Plane(img.width, img.height)};
  std::array<Plane*, 5> dst{&out.bx, &out.by, &out.axx, &out.ayy, &out.axy};
  std::vector<double> patch(basis.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      std::size_t t = 0;
      for (int dy = -n; dy <= n; ++dy)
        for (int dx = -n; dx <= n; ++dx)
          patch[t++] = img.at(clampi(x + dx, 0, img.width - 1), clampi(y + dy, 0, img.height - 1));
      for (int c = 0; c < 5; ++c) {
        double acc = 0;
        for (std::size_t k = 0; k < patch.size(); ++k) acc += kernels[c][k] * patch[k];
        dst[c]->at(x, y) = acc;
      }
    }
  (void)size;
  return out;
}

void refine_flow(const PolyCoeffs& r0, const PolyCoeffs& r1, Plane& u, Plane& v, int window) {
  const int w = u.width;
  const int h = u.height;
  Plane g11(w, h), g12(w, h), g22(w, h), h1(w, h), h2(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = u.at(x, y);
      const double dy = v.at(x, y);
      const double fx = x + dx;
      const double fy = y + dy;
      const double bx1 = sample(r1.bx, fx, fy);
      const double by1 = sample(r1.by, fx, fy);
      const double a11 = 0.5 * (r0.axx.at(x, y) + sample(r1.axx, fx, fy));
      const double a22 = 0.5 * (r0.ayy.at(x, y) + sample(r1.ayy, fx, fy));
      const double a12 = 0.25 * (r0.axy.at(x, y) + sample(r1.axy, fx, fy));
      const double db1 = -0.5 * (bx1 - r0.bx.at(x, y)) + a11 * dx + a12 * dy;
      const double db2 = -0.5 * (by1 - r0.by.at(x, y)) + a12 * dx + a22 * dy;
      g11.at(x, y) = a11 * a11 + a12 * a12;
      g12.at(x, y) = a12 * (a11 + a22);
      g22.at(x, y) = a22 * a22 + a12 * a12;
      h1.at(x, y) = a11 * db1 + a12 * db2;
      h2.at(x, y) = a12 * db1 + a22 * db2;
    }
  const int radius = window / 2;
  const double sigma = 0.3 * ((window - 1) * 0.5 - 1) + 0.8;
  g11 = blur(g11, radius, sigma);
  g12 = blur(g12, radius, sigma);
  g22 = blur(g22, radius, sigma);
  h1 = blur(h1, radius, sigma);
  h2 = blur(h2, radius, sigma);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = g11.at(x, y), b = g12.at(x, y), c = g22.at(x, y);
      const double p = h1.at(x, y), q = h2.at(x, y);
      const double inv = 1.0 / (a * c - b * b + 1e-3);
      u.at(x, y) = (c * p - b * q) * inv;
      v.at(x, y) = (a * q - b * p) * inv;
    }
}

Plane to_plane(const GrayImage& img) {
  Plane p(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) p.values[i] = img.pixels[i];
  return p;
}

}  // namespace

FlowPlanes farneback_flow(const GrayImage& onset, const GrayImage& apex, const FarnebackParams& params) {
  params.validate();
  if (onset.width != apex.width || onset.height != apex.height) {
    throw DataError("onset and apex frames differ in size: " + std::to_string(onset.width) + "x" +
                    std::to_string(onset.height) + " vs " + std::to_string(apex.width) + "x" +
                    std::to_string(apex.height));
  }
  const int min_side = 2 * params.poly_n + 1;
  if (onset.width < min_side || onset.height < min_side) {
    throw DataError("image resolution " + std::to_string(onset.width) + "x" + std::to_string(onset.height) +
                    " is below the minimum of " + std::to_string(min_side) + " pixels per side");
  }

  std::vector<Plane> pyr0{to_plane(onset)};
  std::vector<Plane> pyr1{to_plane(apex)};
  const double smooth = std::max(0.5, (1.0 / params.pyramid_scale - 1.0) * 0.5);
  for (int level = 1; level < params.pyramid_levels; ++level) {
    const int w = static_cast<int>(std::lround(pyr0.back().width * params.pyramid_scale));
    const int h = static_cast<int>(std::lround(pyr0.back().height * params.pyramid_scale));
    if (w < min_side || h < min_side) break;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * smooth)));
    pyr0.push_back(resample_centers(blur(pyr0.back(), radius, smooth), w, h));
    pyr1.push_back(resample_centers(blur(pyr1.back(), radius, smooth), w, h));
  }

  Plane u, v;
  for (int level = static_cast<int>(pyr0.size()) - 1; level >= 0; --level) {
    const Plane& i0 = pyr0[level];
    const Plane& i1 = pyr1[level];
    if (u.values.empty()) {
      u = Plane(i0.width, i0.height);
      v = Plane(i0.width, i0.height);
    } else {
      const double fx = static_cast<double>(i0.width) / u.width;
      const double fy = static_cast<double>(i0.height) / u.height;
      Plane nu = resample_centers(u, i0.width, i0.height);
      Plane nv = resample_centers(v, i0.width, i0.height);
      for (auto& val : nu.values) val *= fx;
      for (auto& val : nv.values) val *= fy;
      u = std::move(nu);
      v = std::move(nv);
    }
    const auto r0 = poly_expand(i0, params.poly_n, params.poly_sigma);
    const auto r1 = poly_expand(i1, params.poly_n, params.poly_sigma);
    for (int it = 0; it < params.iterations; ++it) refine_flow(r0, r1, u, v, params.window_size);
  }
  return {std::move(u), std::move(v)};
}

Plane optical_strain(const Plane& u, const Plane& v) {
  if (u.width != v.width || u.height != v.height || u.values.size() != v.values.size()) {
    throw DimensionError("optical_strain: u and v planes differ in size");
  }
  const int w = u.width;
  const int h = u.height;
  auto ddx = [w](const Plane& p, int x, int y) {
    if (w < 2) return 0.0;
    if (x == 0) return p.at(1, y) - p.at(0, y);
    if (x == w - 1) return p.at(w - 1, y) - p.at(w - 2, y);
    return 0.5 * (p.at(x + 1, y) - p.at(x - 1, y));
  };
  auto ddy = [h](const Plane& p, int x, int y) {
    if (h < 2) return 0.0;
    if (y == 0) return p.at(x, 1) - p.at(x, 0);
    if (y == h - 1) return p.at(x, h - 1) - p.at(x, h - 2);
    return 0.5 * (p.at(x, y + 1) - p.at(x, y - 1));
  };
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double exx = ddx(u, x, y);
      const double eyy = ddy(v, x, y);
      const double shear = ddy(u, x, y) + ddx(v, x, y);
      out.at(x, y) = std::sqrt(exx * exx + eyy * eyy + 0.5 * shear * shear);
    }
  return out;
}

Plane resize_bilinear(const Plane& src, int width, int height) {
  if (width <= 0 || height <= 0) throw ConfigError("resize target must be positive");
  if (src.width == width && src.height == height) return src;
  Plane out(width, height);
  const double sx = width > 1 ? static_cast<double>(src.width - 1) / (width - 1) : 0.0;
  const double sy = height > 1 ? static_cast<double>(src.height - 1) / (height - 1) : 0.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(x, y) = sample(src, x * sx, y * sy);
  return out;
}

Tensor<float> FlowField::to_tensor() const {
  std::vector<float> data;
  data.reserve(u.size() * 3);
  data.insert(data.end(), u.begin(), u.end());
  data.insert(data.end(), v.begin(), v.end());
  data.insert(data.end(), strain.begin(), strain.end());
  return Tensor<float>(Shape{3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)},
                       std::move(data));
}

FlowField assemble_flow_feature(const Plane& u, const Plane& v, const Plane& strain, int out_size) {
  if (out_size <= 0) throw ConfigError("feature size must be positive");
  if (u.width != v.width || u.width != strain.width || u.height != v.height || u.height != strain.height) {
    throw DimensionError("assemble_flow_feature: plane sizes differ");
  }
  FlowField f;
  f.width = out_size;
  f.height = out_size;
  const std::array<const Plane*, 3> src{&u, &v, &strain};
  std::array<std::vector<float>*, 3> dst{&f.u, &f.v, &f.strain};
  for (int c = 0; c < 3; ++c) {
    const Plane r = resize_bilinear(*src[c], out_size, out_size);
    const auto [lo, hi] = std::minmax_element(r.values.begin(), r.values.end());
    auto& out = *dst[c];
    out.assign(r.values.size(), 0.0f);
    if (!(*hi > *lo)) {
      f.degenerate[c] = true;
      continue;
    }
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < r.values.size(); ++i) out[i] = static_cast<float>((r.values[i] - *lo) / span);
  }
  return f;
}

FlowField compute_flow_feature(const GrayImage& onset, const GrayImage& apex, const FarnebackParams& params,
                               int out_size) {
  const auto flow = farneback_flow(onset, apex, params);
  const auto strain = optical_strain(flow.u, flow.v);
  return assemble_flow_feature(flow.u, flow.v, strain, out_size);
}

}  // namespace epir
