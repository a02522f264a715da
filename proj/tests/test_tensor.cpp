#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "epir/error.hpp"
#include "epir/gradcheck.hpp"
#include "epir/ops.hpp"
#include "epir/tensor_io.hpp"
#include "helpers.hpp"

using namespace epir;
using testutil::random_tensor;

using T64 = Tensor<double>;

TEST_CASE("shape and grad buffer invariants") {
  T64 t(Shape{2, 3}, {1, 2, 3, 4, 5, 6}, true);
  CHECK(t.numel() == 6);
  CHECK(numel(t.shape()) == t.data().size());
  CHECK_THROWS_AS(T64(Shape{2, 3}, {1, 2}), DimensionError);
  CHECK_THROWS_AS(T64(Shape{0, 3}, {}), DimensionError);
  auto s = sum(mul(t, t));
  s.backward();
  REQUIRE(t.has_grad());
  CHECK(t.grad().size() == t.numel());
  for (std::size_t i = 0; i < 6; ++i) CHECK(t.grad()[i] == doctest::Approx(2.0 * t.data()[i]));
}

TEST_CASE("every reachable leaf gets a gradient") {
  std::mt19937_64 rng(3);
  auto a = random_tensor<double>({3, 4}, rng, true);
  auto b = random_tensor<double>({4, 2}, rng, true);
  auto c = random_tensor<double>({2}, rng, true);
  auto out = sum(gelu(add(matmul(a, b), c)));
  out.backward();
  CHECK(a.has_grad());
  CHECK(b.has_grad());
  CHECK(c.has_grad());
}

TEST_CASE("matmul hand cases") {
  T64 eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(1);
  auto m = random_tensor<double>({3, 4}, rng);
  CHECK(testutil::max_abs_diff(matmul(eye, m), m) == 0.0);

  T64 a(Shape{2, 2}, {1, 2, 3, 4});
  T64 b(Shape{2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at({0, 0}) == 3.0);
  CHECK(c.at({1, 0}) == 7.0);

  CHECK_THROWS_AS(matmul(a, T64(Shape{3, 1}, {1, 1, 1})), DimensionError);
}

TEST_CASE("matmul error names both shapes") {
  T64 a(Shape{2, 2}, {1, 2, 3, 4});
  T64 b(Shape{3, 1}, {1, 1, 1});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 2]") != std::string::npos);
    CHECK(msg.find("[3, 1]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(5);
  auto a = random_tensor<double>({4, 5}, rng, true);
  auto b = random_tensor<double>({5, 2}, rng, true);
  const double err = grad_check([&] { return sum(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("batched matmul broadcasts a shared right operand") {
  std::mt19937_64 rng(6);
  auto a = random_tensor<double>({2, 3, 4}, rng, true);
  auto b = random_tensor<double>({4, 2}, rng, true);
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 3, 2});
  auto a1 = slice(a, 0, 1, 2);
  auto direct = matmul(reshape(a1, {3, 4}), b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(c.at({1, i, j}) == doctest::Approx(direct.at({i, j})));
  auto w = testutil::probe_weights<double>({2, 3, 2});
  CHECK(grad_check([&] { return sum(mul(matmul(a, b), w)); }, {a, b}) < 1e-6);
}

TEST_CASE("layer norm values and gradient") {
  T64 constant(Shape{1, 4}, {3, 3, 3, 3});
  T64 g = T64::full({4}, 1.0);
  T64 z = T64::zeros({4});
  auto y = layer_norm(constant, g, z, 1e-5);
  for (double v : y.data()) CHECK(v == 0.0);

  T64 row(Shape{1, 3}, {1, 2, 3});
  auto n = layer_norm(row, T64::full({3}, 1.0), T64::zeros({3}), 0.0);
  CHECK(n.data()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(n.data()[1] == doctest::Approx(0.0));
  CHECK(n.data()[2] == doctest::Approx(1.2247).epsilon(1e-3));

  std::mt19937_64 rng(7);
  auto x = random_tensor<double>({2, 4}, rng, true);
  auto gamma = random_tensor<double>({4}, rng, true);
  auto beta = random_tensor<double>({4}, rng, true);
  auto w = testutil::probe_weights<double>({2, 4});
  CHECK(grad_check([&] { return sum(mul(layer_norm(x, gamma, beta, 1e-5), w)); }, {x, gamma, beta}) < 1e-5);
}

TEST_CASE("softmax hand cases") {
  const double inf = std::numeric_limits<double>::infinity();
  auto u = softmax(T64(Shape{3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto m = softmax(T64(Shape{2}, {-inf, 0}));
  CHECK(m.data()[0] == 0.0);
  CHECK(m.data()[1] == 1.0);

  auto h = softmax(T64(Shape{3}, {1, 2, 3}));
  CHECK(h.data()[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(h.data()[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(h.data()[2] == doctest::Approx(0.6652).epsilon(1e-3));

  CHECK_THROWS_AS(softmax(T64(Shape{2}, {-inf, -inf})), NumericError);
}

TEST_CASE("softmax rows sum to one and masked entries are zero") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = mask_diagonal(random_tensor<double>({3, 5, 5}, rng, false, 10.0));
    auto p = softmax(x);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += p.at({b, i, j});
        CHECK(std::abs(s - 1.0) < 1e-6);
        CHECK(p.at({b, i, i}) == 0.0);
      }
  }
}

TEST_CASE("elementwise family") {
  CHECK(gelu(T64::scalar(0.0)).item() == 0.0);
  T64 a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  auto c = concat<double>({a, a}, 0);
  CHECK(c.shape() == Shape{4, 3});
  CHECK(c.at({3, 2}) == 6.0);
  auto t = transpose(a);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.at({2, 1}) == 6.0);
  auto s = slice(a, 1, 1, 3);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.at({1, 0}) == 5.0);
  CHECK(mean(a).item() == doctest::Approx(3.5));
  CHECK_THROWS_AS(add(a, T64(Shape{2}, {1, 2})), DimensionError);
  auto bias = add(a, T64(Shape{3}, {10, 20, 30}));
  CHECK(bias.at({1, 2}) == 36.0);
}

TEST_CASE("composite expression gradient") {
  std::mt19937_64 rng(9);
  auto a = random_tensor<double>({2, 3}, rng, true);
  auto b = random_tensor<double>({2, 3}, rng, true);
  auto c = random_tensor<double>({3}, rng, true);
  auto f = [&] {
    auto pos = add_scalar(mul(b, b), 1.0);
    auto x = div(sub(mul(gelu(a), b), c), pos);
    auto y = sqrt(add_scalar(mul(x, x), 0.5));
    auto z = concat<double>({y, transpose(transpose(slice(concat<double>({a, b}, 0), 0, 1, 3)))}, 1);
    return add(mean(z), sum(softplus(relu(a))));
  };
  CHECK(grad_check(f, {a, b, c}) < 1e-5);
}

TEST_CASE("backward of every op over random shapes") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = dim(rng), k = dim(rng) + 1;
    auto x = random_tensor<double>({r, k}, rng, true);
    auto y = random_tensor<double>({r, k}, rng, true);
    auto g = random_tensor<double>({k}, rng, true);
    auto be = random_tensor<double>({k}, rng, true);
    auto w = testutil::probe_weights<double>({r, k}, 100 + trial);
    auto f = [&] {
      auto ln = layer_norm(x, g, be, 1e-5);
      auto sm = softmax(add(ln, y));
      return sum(mul(add(sm, mul(gelu(y), x)), w));
    };
    CHECK(grad_check(f, {x, y, g, be}) < 1e-4);
  }
}

TEST_CASE("mix_rows merges, reorders and gathers") {
  T64 x(Shape{1, 3, 2}, {0, 2, 2, 0, 5, 5}, true);
  RowMix<double> mix{{{{0, 0.5}, {1, 0.5}}, {{2, 1.0}}, {{2, 1.0}}}};
  auto y = mix_rows(x, mix);
  CHECK(y.shape() == Shape{1, 3, 2});
  CHECK(y.at({0, 0, 0}) == 1.0);
  CHECK(y.at({0, 0, 1}) == 1.0);
  CHECK(y.at({0, 2, 1}) == 5.0);
  auto w = testutil::probe_weights<double>({1, 3, 2});
  CHECK(grad_check([&] { return sum(mul(mix_rows(x, mix), w)); }, {x}) < 1e-8);
}

TEST_CASE("cross entropy and l2 normalisation") {
  T64 logits(Shape{1, 3}, {10, 0, 0});
  CHECK(cross_entropy(logits, {0}).item() < 1e-3);
  T64 uniform(Shape{2, 3}, {0, 0, 0, 1, 1, 1});
  CHECK(cross_entropy(uniform, {0, 2}).item() == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(cross_entropy(uniform, {0, 3}), ContractError);
  CHECK_THROWS_AS(l2_normalize_rows(T64(Shape{2, 2}, {1, 0, 0, 0})), NumericError);
  std::mt19937_64 rng(11);
  auto l = random_tensor<double>({4, 3}, rng, true);
  CHECK(grad_check([&] { return cross_entropy(l, {0, 1, 2, 1}); }, {l}) < 1e-5);
}

TEST_CASE("grad_check contract") {
  std::mt19937_64 rng(12);
  auto p = random_tensor<double>({5}, rng, true);
  CHECK(grad_check([&] { return sum(mul(p, p)); }, {p}) < 1e-8);
  auto k = random_tensor<double>({3}, rng, true);
  CHECK(grad_check([&] { return T64::scalar(4.0); }, {k}) == 0.0);
  CHECK_THROWS_AS(grad_check([&] { return mul(p, p); }, {p}), ContractError);
}

TEST_CASE("forward pass is bit-deterministic") {
  std::mt19937_64 r1(13), r2(13);
  auto a1 = random_tensor<double>({4, 6}, r1), b1 = random_tensor<double>({6, 3}, r1);
  auto a2 = random_tensor<double>({4, 6}, r2), b2 = random_tensor<double>({6, 3}, r2);
  auto y1 = softmax(gelu(matmul(a1, b1)));
  auto y2 = softmax(gelu(matmul(a2, b2)));
  CHECK(testutil::max_abs_diff(y1, y2) == 0.0);
}

TEST_CASE("no-grad guard skips the tape") {
  T64 a(Shape{2}, {1, 2}, true);
  {
    NoGradGuard guard;
    auto y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(mul(a, a).requires_grad());
}

TEST_CASE("flop counter") {
  std::mt19937_64 rng(14);
  auto a = random_tensor<float>({3, 4}, rng);
  auto b = random_tensor<float>({4, 5}, rng);
  flops::Counter outer;
  {
    flops::Counter inner;
    matmul(a, b);
    CHECK(inner.total() == 2 * 3 * 4 * 5);
  }
  add(a, a);
  softmax(a);
  concat<float>({a, a}, 0);
  // nested counters shadow the outer one
  CHECK(outer.total() == 12 + 3 * 12);
}

TEST_CASE("EPT1 round trip") {
  testutil::TempDir dir("ept1");
  std::mt19937_64 rng(15);
  auto f = random_tensor<float>({2, 3, 4}, rng);
  save_tensor(dir.path() / "f.ept1", f);
  auto g = load_tensor<float>(dir.path() / "f.ept1");
  CHECK(g.shape() == f.shape());
  CHECK(testutil::max_abs_diff(f, g) == 0.0);
  auto d = random_tensor<double>({5}, rng);
  save_tensor(dir.path() / "d.ept1", d);
  CHECK(read_ept1_header(dir.path() / "d.ept1").dtype == DType::kFloat64);
  CHECK(testutil::max_abs_diff(load_tensor<double>(dir.path() / "d.ept1"), d) == 0.0);

  const std::vector<double> vals{1.5, -2.0};
  auto bytes = encode_ept1({2}, DType::kFloat32, vals);
  CHECK(bytes.size() == 4 + 1 + 1 + 4 + 8);
  CHECK(bytes[0] == 'E');
  CHECK(bytes[3] == '1');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 1);
  CHECK(bytes[6] == 2);
  Ept1Header h;
  CHECK(decode_ept1(bytes, &h) == vals);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_ept1(bytes, &h), DataError);
}
