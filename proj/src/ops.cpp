#include "epir/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "epir/error.hpp"

namespace epir {

namespace {

// Per-element costs used by the instrumented FLOP counter.
constexpr std::uint64_t kSoftmaxCost = 3;
constexpr std::uint64_t kLayerNormCost = 5;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A,
             const T* __restrict B, T* __restrict C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A,
             const T* __restrict B, T* __restrict C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  std::vector<T> bt(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_nn(M, N, K, A, bt.data(), C);
}

enum class BroadcastKind { kSame, kSuffix, kScalar };

BroadcastKind broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return BroadcastKind::kSame;
  if (numel(b) == 1) return BroadcastKind::kScalar;
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin()))
    return BroadcastKind::kSuffix;
  throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(b) + " onto " +
                       to_string(a));
}

// Applies f(a_i, b_j) elementwise with b broadcast; backward uses da, db
// partial derivatives evaluated at (a, b, out).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa,
                    DB dfb) {
  const auto kind = broadcast_kind(a.shape(), b.shape(), name);
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = kind == BroadcastKind::kScalar ? 0 : i % m;
    out[i] = f(ad[i], bd[j]);
  }
  flops::add(n);
  return Tensor<T>::from_op(
      a.shape(), std::move(out), {a, b}, [kind, n, m, dfa, dfb](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
          auto& ga = pa.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = kind == BroadcastKind::kScalar ? 0 : i % m;
            ga[i] += g[i] * dfa(pa.data[i], pb.data[j], self.data[i]);
          }
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = kind == BroadcastKind::kScalar ? 0 : i % m;
            gb[j] += g[i] * dfb(pa.data[i], pb.data[j], self.data[i]);
          }
        }
      });
}

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& x, F f, DF df) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  flops::add(xd.size());
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [df](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(as) + " x " +
                         to_string(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t k2 = bs[bs.size() - 2];
  const std::size_t n = bs.back();
  const bool shared_b = bs.size() == 2;
  bool ok = k == k2;
  if (!shared_b) ok = ok && as.size() == bs.size() && std::equal(as.begin(), as.end() - 2, bs.begin());
  if (!ok) throw DimensionError("matmul shape mismatch: " + to_string(as) + " x " + to_string(bs));

  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);

  std::vector<T> out(batch * m * n, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (shared_b) {
    gemm_nn(batch * m, n, k, ad, bd, out.data());
  } else {
    for (std::size_t p = 0; p < batch; ++p)
      gemm_nn(m, n, k, ad + p * m * k, bd + p * k * n, out.data() + p * m * n);
  }
  flops::add(2 * batch * m * n * k);

  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {a, b},
      [batch, m, n, k, shared_b](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* g = self.grad.data();
        if (pa.requires_grad) {
          T* ga = pa.ensure_grad().data();
          if (shared_b) {
            gemm_nt(batch * m, k, n, g, pb.data.data(), ga);
          } else {
            for (std::size_t p = 0; p < batch; ++p)
              gemm_nt(m, k, n, g + p * m * n, pb.data.data() + p * k * n, ga + p * m * k);
          }
        }
        if (pb.requires_grad) {
          T* gb = pb.ensure_grad().data();
          if (shared_b) {
            gemm_tn(k, n, batch * m, pa.data.data(), g, gb);
          } else {
            for (std::size_t p = 0; p < batch; ++p)
              gemm_tn(k, n, m, pa.data.data() + p * m * k, g + p * m * n, gb + p * k * n);
          }
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t batch = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t p = 0; p < batch; ++p)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[p * r * c + j * r + i] = xd[p * r * c + i * c + j];
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x},
                            [batch, r, c](detail::Node<T>& self) {
                              auto& g = self.parents[0]->ensure_grad();
                              for (std::size_t p = 0; p < batch; ++p)
                                for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                    g[p * r * c + i * c + j] += self.grad[p * r * c + j * r + i];
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary_op(x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value) {
  return unary_op(x, [value](T v) { return v * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary_op(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::sqrt(v); }, [](T, T out) { return T(0.5) / out; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary_op(
      x,
      [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  flops::add(x.numel());
  return Tensor<T>::from_op(Shape{1}, {s}, {x}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = static_cast<T>(x.numel());
  T s = 0;
  for (auto v : x.data()) s += v;
  flops::add(x.numel());
  return Tensor<T>::from_op(Shape{1}, {s / n}, {x}, [n](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const auto& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size());
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
    if (!ok) throw DimensionError("concat shape mismatch: " + to_string(s0) + " vs " + to_string(s));
    out_shape[ax] += s[ax];
  }
  const auto outer = split_at(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto sp = split_at(p.shape(), ax);
    auto pd = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pd.begin() + o * sp.len * sp.inner, sp.len * sp.inner,
                  out.begin() + (o * outer.len + off) * outer.inner);
    off += sp.len;
  }
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), parts, [outer, offsets](detail::Node<T>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = *self.parents[k];
          if (!p.requires_grad) continue;
          auto& g = p.ensure_grad();
          const std::size_t len = p.data.size() / (outer.outer * outer.inner);
          for (std::size_t o = 0; o < outer.outer; ++o) {
            const T* src = self.grad.data() + (o * outer.len + offsets[k]) * outer.inner;
            T* dst = g.data() + o * len * outer.inner;
            for (std::size_t i = 0; i < len * outer.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  if (begin >= end || end > s[ax]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for axis of size " + std::to_string(s[ax]));
  }
  const auto sp = split_at(s, ax);
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[ax] = len;
  auto xd = x.data();
  std::vector<T> out(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xd.begin() + (o * sp.len + begin) * sp.inner, len * sp.inner,
                out.begin() + o * len * sp.inner);
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x},
                            [sp, begin, len](detail::Node<T>& self) {
                              auto& g = self.parents[0]->ensure_grad();
                              for (std::size_t o = 0; o < sp.outer; ++o) {
                                const T* src = self.grad.data() + o * len * sp.inner;
                                T* dst = g.data() + (o * sp.len + begin) * sp.inner;
                                for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                              }
                            });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto xd = x.data();
  return Tensor<T>::from_op(std::move(shape), std::vector<T>(xd.begin(), xd.end()), {x},
                            [](detail::Node<T>& self) {
                              auto& g = self.parents[0]->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                            });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  const auto& s = x.shape();
  if (s.size() > shape.size() || !std::equal(s.rbegin(), s.rend(), shape.rbegin())) {
    throw DimensionError("cannot broadcast " + to_string(s) + " to " + to_string(shape));
  }
  const std::size_t m = x.numel();
  const std::size_t reps = numel(shape) / m;
  auto xd = x.data();
  std::vector<T> out(numel(shape));
  for (std::size_t r = 0; r < reps; ++r) std::copy(xd.begin(), xd.end(), out.begin() + r * m);
  return Tensor<T>::from_op(shape, std::move(out), {x}, [m, reps](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t i = 0; i < m; ++i) g[i] += self.grad[r * m + i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const auto sp = split_at(s, ax);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T mx = neg_inf;
      for (std::size_t i = 0; i < sp.len; ++i) mx = std::max(mx, xd[base + i * sp.inner]);
      if (mx == neg_inf) throw NumericError("softmax over a slice whose entries are all -inf");
      T z = 0;
      for (std::size_t i = 0; i < sp.len; ++i) {
        const T v = xd[base + i * sp.inner];
        const T e = v == neg_inf ? T(0) : std::exp(v - mx);
        out[base + i * sp.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < sp.len; ++i) out[base + i * sp.inner] /= z;
    }
  }
  flops::add(kSoftmaxCost * xd.size());
  return Tensor<T>::from_op(s, std::move(out), {x}, [sp](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        T dot = 0;
        for (std::size_t i = 0; i < sp.len; ++i) {
          const std::size_t idx = base + i * sp.inner;
          dot += y[idx] * gy[idx];
        }
        for (std::size_t i = 0; i < sp.len; ++i) {
          const std::size_t idx = base + i * sp.inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const auto& s = x.shape();
  const std::size_t d = s.back();
  if (d == 0) throw DimensionError("layer_norm over an empty axis");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm affine size mismatch: input " + to_string(s) + ", gamma " +
                         to_string(gamma.shape()) + ", beta " + to_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<T> out(xd.size());
  std::vector<T> xhat(xd.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mu) * is;
      xhat[r * d + i] = h;
      out[r * d + i] = gd[i] * h + bd[i];
    }
  }
  flops::add(kLayerNormCost * xd.size());
  return Tensor<T>::from_op(
      s, std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gy = self.grad;
        if (pg.requires_grad || pb.requires_grad) {
          auto& gg = pg.ensure_grad();
          auto& gb = pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) {
              gg[i] += gy[r * d + i] * xhat[r * d + i];
              gb[i] += gy[r * d + i];
            }
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          const auto& gam = pg.data;
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0;
            T m2 = 0;
            for (std::size_t i = 0; i < d; ++i) {
              dh[i] = gy[r * d + i] * gam[i];
              m1 += dh[i];
              m2 += dh[i] * xhat[r * d + i];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t i = 0; i < d; ++i)
              gx[r * d + i] += inv_std[r] * (dh[i] - m1 - xhat[r * d + i] * m2);
          }
        }
      });
}

template <typename T>
Tensor<T> mask_diagonal(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    throw DimensionError("mask_diagonal needs square trailing matrices, got " + to_string(s));
  }
  const std::size_t n = s.back();
  const std::size_t batch = x.numel() / (n * n);
  auto xd = x.data();
  std::vector<T> out(xd.begin(), xd.end());
  for (std::size_t p = 0; p < batch; ++p)
    for (std::size_t i = 0; i < n; ++i) out[p * n * n + i * n + i] = -std::numeric_limits<T>::infinity();
  return Tensor<T>::from_op(s, std::move(out), {x}, [n](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      const std::size_t within = idx % (n * n);
      if (within / n != within % n) g[idx] += self.grad[idx];
    }
  });
}

template <typename T>
Tensor<T> mix_rows(const Tensor<T>& x, const RowMix<T>& mix) {
  const auto& s = x.shape();
  if (s.size() != 3) throw DimensionError("mix_rows expects [B, n, d], got " + to_string(s));
  const std::size_t batch = s[0];
  const std::size_t n = s[1];
  const std::size_t d = s[2];
  if (mix.size() != batch) throw DimensionError("mix_rows: batch size mismatch");
  const std::size_t rows = mix[0].size();
  for (const auto& m : mix) {
    if (m.size() != rows) throw DimensionError("mix_rows: ragged output row counts");
    for (const auto& r : m)
      for (const auto& [src, w] : r)
        if (src >= n) throw DimensionError("mix_rows: source row out of range");
  }
  auto xd = x.data();
  std::vector<T> out(batch * rows * d, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r) {
      T* dst = out.data() + (b * rows + r) * d;
      for (const auto& [src, w] : mix[b][r]) {
        const T* row = xd.data() + (b * n + src) * d;
        for (std::size_t i = 0; i < d; ++i) dst[i] += w * row[i];
      }
    }
  return Tensor<T>::from_op(Shape{batch, rows, d}, std::move(out), {x},
                            [mix, n, d, rows](detail::Node<T>& self) {
                              auto& g = self.parents[0]->ensure_grad();
                              for (std::size_t b = 0; b < mix.size(); ++b)
                                for (std::size_t r = 0; r < rows; ++r) {
                                  const T* src_g = self.grad.data() + (b * rows + r) * d;
                                  for (const auto& [src, w] : mix[b][r]) {
                                    T* dst = g.data() + (b * n + src) * d;
                                    for (std::size_t i = 0; i < d; ++i) dst[i] += w * src_g[i];
                                  }
                                }
                            });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw DimensionError("l2_normalize_rows expects [B, d], got " + to_string(s));
  const std::size_t rows = s[0];
  const std::size_t d = s[1];
  auto xd = x.data();
  std::vector<T> out(xd.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += xd[r * d + i] * xd[r * d + i];
    const T nrm = std::sqrt(ss);
    if (!(nrm > T(0))) throw NumericError("cannot L2-normalize a zero-norm row " + std::to_string(r));
    norms[r] = nrm;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = xd[r * d + i] / nrm;
  }
  return Tensor<T>::from_op(s, std::move(out), {x},
                            [rows, d, norms = std::move(norms)](detail::Node<T>& self) {
                              auto& g = self.parents[0]->ensure_grad();
                              const auto& y = self.data;
                              for (std::size_t r = 0; r < rows; ++r) {
                                T dot = 0;
                                for (std::size_t i = 0; i < d; ++i) dot += y[r * d + i] * self.grad[r * d + i];
                                for (std::size_t i = 0; i < d; ++i)
                                  g[r * d + i] += (self.grad[r * d + i] - y[r * d + i] * dot) / norms[r];
                              }
                            });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  const auto& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross_entropy expects [B, C] logits, got " + to_string(s));
  const std::size_t batch = s[0];
  const std::size_t classes = s[1];
  if (labels.size() != batch) throw DimensionError("cross_entropy: label count mismatch");
  for (auto l : labels) {
    if (l >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " out of range for " +
                          std::to_string(classes) + " classes");
    }
  }
  auto ld = logits.data();
  std::vector<T> probs(ld.size());
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = ld.data() + b * classes;
    T mx = *std::max_element(row, row + classes);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[labels[b]];
  }
  loss /= static_cast<T>(batch);
  return Tensor<T>::from_op(Shape{1}, {loss}, {logits},
                            [labels, classes, batch, probs = std::move(probs)](detail::Node<T>& self) {
                              auto& g = self.parents[0]->ensure_grad();
                              const T scale = self.grad[0] / static_cast<T>(batch);
                              for (std::size_t b = 0; b < batch; ++b)
                                for (std::size_t c = 0; c < classes; ++c) {
                                  const T target = c == labels[b] ? T(1) : T(0);
                                  g[b * classes + c] += scale * (probs[b * classes + c] - target);
                                }
                            });
}

#define EPIR_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sqrt(const Tensor<T>&);                                                      \
  template Tensor<T> softplus(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                  \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                \
  template Tensor<T> softmax(const Tensor<T>&, int);                                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> mask_diagonal(const Tensor<T>&);                                             \
  template Tensor<T> mix_rows(const Tensor<T>&, const RowMix<T>&);                                \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&);                                         \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);

EPIR_INSTANTIATE_OPS(float)
EPIR_INSTANTIATE_OPS(double)

#undef EPIR_INSTANTIATE_OPS

}  // namespace epir
