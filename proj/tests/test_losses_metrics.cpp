#include <cmath>
#include <random>

#include "doctest.h"
#include "epir/error.hpp"
#include "epir/gradcheck.hpp"
#include "epir/losses.hpp"
#include "epir/metrics.hpp"
#include "epir/ops.hpp"
#include "helpers.hpp"
#include "json.hpp"

using namespace epir;
using testutil::random_tensor;

namespace {

// Direct transcription of the contrastive objective, no autograd.
double contrastive_oracle(const Tensor<double>& y, const std::vector<std::size_t>& labels, double alpha) {
  const std::size_t B = y.dim(0), d = y.dim(1);
  std::vector<std::vector<double>> z(B, std::vector<double>(d));
  for (std::size_t i = 0; i < B; ++i) {
    double n = 0;
    for (std::size_t k = 0; k < d; ++k) n += y.at({i, k}) * y.at({i, k});
    for (std::size_t k = 0; k < d; ++k) z[i][k] = y.at({i, k}) / std::sqrt(n);
  }
  double total = 0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += z[i][k] * z[j][k];
      total += labels[i] == labels[j] ? 1.0 - s : std::max(s - alpha, 0.0);
    }
  return total / double(B * B);
}

struct Recount {
  double uf1 = 0, uar = 0;
};

Recount brute_force(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth, std::size_t C) {
  Recount r;
  std::size_t supported = 0;
  for (std::size_t c = 0; c < C; ++c) {
    double tp = 0, fp = 0, fn = 0, n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth[i] == c) ++n;
      if (pred[i] == c && truth[i] == c) ++tp;
      if (pred[i] == c && truth[i] != c) ++fp;
      if (pred[i] != c && truth[i] == c) ++fn;
    }
    r.uf1 += (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    if (n > 0) {
      r.uar += tp / n;
      ++supported;
    }
  }
  r.uf1 /= double(C);
  r.uar /= double(supported);
  return r;
}

}  // namespace

TEST_CASE("cross entropy") {
  const Tensor<double> confident(Shape{2, 3}, {10, 0, 0, 0, 0, 10});
  CHECK(cross_entropy_loss(confident, {0, 2}).item() < 1e-3);
  CHECK(cross_entropy_loss(Tensor<double>::zeros({4, 3}), {0, 1, 2, 0}).item() == doctest::Approx(1.0986).epsilon(1e-4));
  CHECK_THROWS(cross_entropy_loss(confident, {0, 5}));
  std::mt19937_64 rng(1);
  auto l = random_tensor<double>({5, 3}, rng, true);
  CHECK(grad_check([&] { return cross_entropy_loss(l, {0, 1, 2, 2, 0}); }, {l}) < 1e-5);
}

TEST_CASE("contrastive hand cases") {
  const ContrastiveConfig cfg;
  CHECK(cfg.alpha == 0.4);
  const Tensor<double> same(Shape{2, 2}, {1, 1, 2, 2});
  CHECK(contrastive_loss(same, {0, 0}, cfg).item() == doctest::Approx(0.0));
  const Tensor<double> ortho(Shape{2, 2}, {1, 0, 0, 3});
  CHECK(contrastive_loss(ortho, {0, 1}, cfg).item() == 0.0);
  const double c = std::cos(std::acos(0.5));
  const Tensor<double> half(Shape{2, 2}, {1, 0, c, std::sqrt(1 - c * c)});
  CHECK(contrastive_loss(half, {0, 1}, cfg).item() == doctest::Approx(0.05));
  CHECK_THROWS_AS(contrastive_loss(Tensor<double>(Shape{2, 2}, {0, 0, 1, 0}), {0, 1}, cfg), NumericError);
  ContrastiveConfig bad;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("contrastive properties") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> label(0, 2);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  const ContrastiveConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + trial % 7;
    auto y = random_tensor<double>({B, 5}, rng);
    std::vector<std::size_t> labels(B);
    for (auto& l : labels) l = label(rng);
    const double loss = contrastive_loss(y, labels, cfg).item();
    CHECK(loss >= -1e-12);
    CHECK(loss == doctest::Approx(contrastive_oracle(y, labels, cfg.alpha)).epsilon(1e-12));
    std::vector<double> scaled(y.data().begin(), y.data().end());
    for (std::size_t i = 0; i < B; ++i) {
      const double s = scale(rng);
      for (std::size_t k = 0; k < 5; ++k) scaled[i * 5 + k] *= s;
    }
    const double again = contrastive_loss(Tensor<double>({B, 5}, scaled), labels, cfg).item();
    CHECK(again == doctest::Approx(loss).epsilon(1e-12));
  }
  auto y = random_tensor<double>({4, 5}, rng, true);
  CHECK(grad_check([&] { return contrastive_loss(y, {0, 1, 0, 1}, cfg); }, {y}) < 1e-5);
}

TEST_CASE("confusion counting") {
  const auto perfect = confusion_accumulate({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(perfect.fp[c] == 0);
    CHECK(perfect.fn[c] == 0);
  }
  CHECK(uf1(perfect) == 1.0);
  CHECK(uar(perfect) == 1.0);

  const auto wrong = confusion_accumulate({2}, {0}, 3);
  CHECK(wrong.fn[0] == 1);
  CHECK(wrong.fp[2] == 1);
  CHECK(wrong.tp[0] == 0);
  CHECK(wrong.at(0, 2) == 1);

  ConfusionCounts hand(2);
  hand.tp = {1, 0};
  hand.fp = {1, 0};
  hand.fn = {0, 1};
  hand.support = {1, 1};
  CHECK(uf1(hand) == 1.0 / 3.0);
  const auto h2 = confusion_accumulate({0, 0}, {0, 1}, 2);
  CHECK(uf1(h2) == 1.0 / 3.0);

  const auto r = confusion_accumulate({0, 0, 1, 0}, {0, 1, 1, 2}, 3);
  CHECK(uar(r) == doctest::Approx(0.5));

  const auto empty_class = confusion_accumulate({0, 1}, {0, 1}, 3);
  CHECK(uf1(empty_class) == doctest::Approx(2.0 / 3.0));
  CHECK(uar(empty_class) == 1.0);

  CHECK_THROWS_AS(uar(ConfusionCounts(3)), DataError);
}

TEST_CASE("metrics match a brute-force recount") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t C = 2 + trial % 4, n = 1 + trial % 50;
    std::uniform_int_distribution<std::size_t> cls(0, C - 1);
    std::vector<std::size_t> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = cls(rng);
      t[i] = cls(rng);
    }
    const auto counts = confusion_accumulate(p, t, C);
    std::size_t total = 0;
    for (std::size_t c = 0; c < C; ++c) {
      total += counts.support[c];
      CHECK(counts.tp[c] <= counts.support[c]);
    }
    CHECK(total == n);
    const auto o = brute_force(p, t, C);
    CHECK(std::abs(uf1(counts) - o.uf1) < 1e-12);
    CHECK(std::abs(uar(counts) - o.uar) < 1e-12);
    CHECK(uf1(counts) >= 0.0);
    CHECK(uf1(counts) <= 1.0);

    // pooling is independent of how samples are split into folds
    const std::size_t cut = n / 2;
    auto a = confusion_accumulate({p.begin(), p.begin() + cut}, {t.begin(), t.begin() + cut}, C);
    confusion_accumulate(a, {p.begin() + cut, p.end()}, {t.begin() + cut, t.end()});
    CHECK(a.matrix == counts.matrix);
    auto b = confusion_accumulate({p.rbegin(), p.rend()}, {t.rbegin(), t.rend()}, C);
    CHECK(uf1(b) == uf1(counts));
  }
}

TEST_CASE("metrics json") {
  const auto c = confusion_accumulate({0, 1, 1}, {0, 1, 0}, 2);
  const auto j = nlohmann::json::parse(metrics_json(c, {"neg", "pos"}));
  CHECK(j.contains("uf1"));
  CHECK(j.contains("uar"));
  CHECK(j["per_class_f1"].size() == 2);
  CHECK(j["per_class_recall"][0].get<double>() == 0.5);
  CHECK(j["confusion_matrix"][0][1].get<int>() == 1);
  CHECK(j["classes"][1] == "pos");
}
