#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epir/config.hpp"
#include "epir/cost.hpp"
#include "epir/gradcheck.hpp"
#include "epir/losses.hpp"
#include "epir/metrics.hpp"
#include "epir/model.hpp"
#include "epir/ops.hpp"
#include "epir/optical_flow.hpp"
#include "epir/pipeline.hpp"
#include "epir/reports.hpp"
#include "helpers.hpp"

using namespace epir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor<double> random_patches(const ModelConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
  return testutil::random_tensor<double>(
      {batch, static_cast<std::size_t>(cfg.tokenizer.num_patches()), static_cast<std::size_t>(cfg.tokenizer.patch_dim())},
      rng);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.tokenizer.input_size = 4;
  cfg.tokenizer.patch_size = 2;
  cfg.tokenizer.shift_offset = 1;
  cfg.tokenizer.model_dim = 8;
  cfg.heads = 2;
  cfg.integration.num_blocks = 2;
  cfg.integration.pairs_per_block = 1;
  cfg.extractor.num_blocks_before_dtsm = 2;
  cfg.num_classes = 3;
  const EpirModel<double> model(cfg, 17);
  std::mt19937_64 rng(18);
  const auto patches = random_patches(cfg, 2, rng);
  const std::vector<std::size_t> labels = {0, 2};
  const ContrastiveConfig contrastive;
  auto loss = [&] {
    const auto fwd = model.forward(patches);
    return add(cross_entropy_loss(fwd.logits, labels), contrastive_loss(fwd.cls_final, labels, contrastive));
  };
  std::vector<Tensor<double>> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  const double err = grad_check(loss, params);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {err < 1e-4 && secs < 60.0,
          fmt("max relative error %.3g over %.0f parameter tensors, %.1f s", err, double(params.size()), secs)};
}

Outcome mask_suite() {
  ModelConfig cfg;
  cfg.tokenizer.model_dim = 32;
  std::mt19937_64 rng(31);
  double worst_row = 0.0, worst_diag = 0.0;
  std::size_t matrices = 0;
  for (int pass = 0; pass < 1000; ++pass) {
    const EpirModel<double> model(cfg, 1000 + pass / 50);
    std::normal_distribution<double> scale(0.0, 1.5);
    NoGradGuard guard;
    const auto fwd = model.forward(mul_scalar(random_patches(cfg, 1, rng), std::exp(scale(rng))));
    for (const auto& s : fwd.attention)
      for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h) {
          ++matrices;
          for (std::size_t i = 0; i < s.rows; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < s.cols; ++j) row += s.at(b, h, i, j);
            worst_row = std::max(worst_row, std::abs(row - 1.0));
            worst_diag = std::max(worst_diag, std::abs(s.at(b, h, i, i)));
          }
        }
  }
  return {worst_diag == 0.0 && worst_row <= 1e-6,
          fmt("%.0f matrices, max |diag| %.3g, max |row sum - 1| %.3g", double(matrices), worst_diag, worst_row)};
}

Tensor<double> drop_row(const Tensor<double>& x, std::size_t row) {
  return concat<double>({slice(x, 1, 0, row), slice(x, 1, row + 1, x.dim(1))}, 1);
}

Outcome merge_suite() {
  const ModelConfig cfg;
  const EpirModel<float> model(cfg, 3);
  std::mt19937_64 rng(41);
  NoGradGuard guard;
  const auto fwd = model.forward(random_patches(cfg, 2, rng).cast<float>());
  const bool count_ok = cfg.initial_tokens() == 17 && cfg.integration.num_blocks == 6 &&
                        cfg.integration.pairs_per_block == 1 && fwd.tokens_after_integration == 11 &&
                        cfg.token_schedule().back() == 11;

  // duplicate token 2 onto token 10 (second half), then
  // compare merging against deleting the duplicate after attention
  const std::size_t n = 17, d = 16, src = 2, dup = 10;
  TransformerBlock<double> block(d, 3, 6, rng);
  std::vector<TransformerBlock<double>> after;
  for (int i = 0; i < 3; ++i) after.emplace_back(d, 3, 6, rng);
  auto x = testutil::random_tensor<double>({2, n, d}, rng);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < d; ++k) v[(b * n + dup) * d + k] = v[(b * n + src) * d + k];
  x = Tensor<double>({2, n, d}, v);

  const auto merged = integration_block(TokenBatch<double>{x, true}, block, false, 1);
  bool picked = true;
  for (const auto& t : merged.traces)
    picked = picked && t.pairs.size() == 1 && t.pairs[0].first == src - 1 && t.pairs[0].second == dup - 9;
  const auto deleted = ffn_sublayer(drop_row(attention_sublayer(x, block, false).out, dup), block);
  double worst = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& survivor = merged.traces[b].survivor;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == dup) continue;
      const std::size_t r = o < dup ? o : o - 1;
      for (std::size_t k = 0; k < d; ++k)
        worst = std::max(worst, std::abs(merged.block.tokens.tokens.at({b, survivor[o], k}) - deleted.at({b, r, k})));
    }
  }
  TokenBatch<double> a = merged.block.tokens, c{deleted, true};
  for (const auto& blk : after) {
    a = transformer_block(a, blk, false).tokens;
    c = transformer_block(c, blk, false).tokens;
  }
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(a.tokens.at({b, 0, k}) - c.tokens.at({b, 0, k})));

  return {count_ok && picked && worst < 1e-6,
          fmt("17 tokens -> %.0f after 6 blocks with K=1, duplicate-merge deviation %.3g", double(fwd.tokens_after_integration),
              worst)};
}

SquareMatrix random_stochastic(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SquareMatrix m{n, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += m.at(i, j) = u(rng);
    for (std::size_t j = 0; j < n; ++j) m.at(i, j) /= s;
  }
  return m;
}

Outcome rollout_suite() {
  std::mt19937_64 rng(51);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 16, L = 1 + trial % 12, H = 1 + trial % 4;
    std::vector<std::vector<SquareMatrix>> layers(L);
    for (auto& l : layers)
      for (std::size_t h = 0; h < H; ++h) l.push_back(random_stochastic(n, rng));
    const auto got = attention_rollout(layers);
    for (std::size_t h = 0; h < H; ++h) {
      std::vector<double> acc = layers[0][h].values;
      for (std::size_t l = 1; l < L; ++l) {
        std::vector<double> next(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) next[i * n + j] += layers[l][h].values[i * n + k] * acc[k * n + j];
        acc = std::move(next);
      }
      for (std::size_t i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(got[h].values[i] - acc[i]));
    }
  }
  std::vector<std::vector<SquareMatrix>> ids(5, {SquareMatrix::identity(7), SquareMatrix::identity(7)});
  bool identity = true;
  for (const auto& m : attention_rollout(ids)) identity = identity && m.values == SquareMatrix::identity(7).values;
  return {worst < 1e-9 && identity, fmt("max deviation from chained product %.3g over 200 stacks", worst)};
}

Outcome metric_suite() {
  std::mt19937_64 rng(61);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t C = 2 + trial % 6, n = 1 + (trial * 7) % 120;
    std::uniform_int_distribution<std::size_t> cls(0, C - 1);
    std::vector<std::size_t> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = cls(rng);
      t[i] = cls(rng);
    }
    double f1 = 0.0, rec = 0.0;
    std::size_t supported = 0;
    for (std::size_t c = 0; c < C; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += p[i] == c && t[i] == c;
        fp += p[i] == c && t[i] != c;
        fn += p[i] != c && t[i] == c;
      }
      if (2 * tp + fp + fn > 0) f1 += 2 * tp / (2 * tp + fp + fn);
      if (tp + fn > 0) {
        rec += tp / (tp + fn);
        ++supported;
      }
    }
    const auto counts = confusion_accumulate(p, t, C);
    worst = std::max(worst, std::abs(uf1(counts) - f1 / double(C)));
    worst = std::max(worst, std::abs(uar(counts) - rec / double(supported)));
  }
  ConfusionCounts hand(2);
  hand.tp = {1, 0};
  hand.fp = {1, 0};
  hand.fn = {0, 1};
  hand.support = {1, 1};
  const double h = uf1(hand);
  return {worst < 1e-12 && h == 1.0 / 3.0, fmt("max deviation %.3g over 10000 sets, hand case UF1 %.17g", worst, h)};
}

Outcome flow_suite() {
  const auto onset = testutil::texture(64, 0, 0);
  const auto apex = testutil::texture(64, 2, 1);
  const auto f = farneback_flow(onset, apex, FarnebackParams{});
  const int margin = 12;
  double err = 0.0;
  int count = 0;
  for (int y = margin; y < 64 - margin; ++y)
    for (int x = margin; x < 64 - margin; ++x) {
      err += std::hypot(f.u.at(x, y) - 2.0, f.v.at(x, y) - 1.0);
      ++count;
    }
  err /= count;

  const auto same = farneback_flow(onset, onset, FarnebackParams{});
  double still = 0.0;
  for (std::size_t i = 0; i < same.u.values.size(); ++i)
    still = std::max({still, std::abs(same.u.values[i]), std::abs(same.v.values[i])});

  Plane u(32, 32), v(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) u.at(x, y) = x;
  const auto strain = optical_strain(u, v);
  double strain_err = 0.0;
  for (int y = 1; y < 31; ++y)
    for (int x = 1; x < 31; ++x) strain_err = std::max(strain_err, std::abs(strain.at(x, y) - 1.0));
  return {err < 0.25 && still < 1e-6 && strain_err < 1e-3,
          fmt("mean endpoint error %.3f px, identical-frame flow %.3g, strain error %.3g", err, still, strain_err)};
}

RunConfig learning_config() {
  RunConfig c;
  c.set("model_dim", "64");
  c.set("epochs", "40");
  c.set("batch_size", "8");
  c.set("learning_rate", "1e-3");
  c.set("seed", "1");
  c.validate();
  return c;
}

Outcome learning_suite(const fs::path& root) {
  const auto start = std::chrono::steady_clock::now();
  SyntheticSpec spec;
  spec.classes = 3;
  spec.subjects = 6;
  spec.samples_per_subject = 8;
  spec.seed = 11;
  generate_synthetic(spec, root / "data");
  const auto cfg = learning_config();
  const auto first = run_train(root / "data" / "manifest.csv", cfg, root / "run_a", root / "cache");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto second = run_train(root / "data" / "manifest.csv", cfg, root / "run_b", root / "cache");
  const bool same = read_text(root / "run_a" / "predictions.csv") == read_text(root / "run_b" / "predictions.csv") &&
                    read_text(root / "run_a" / "loss_curves.csv") == read_text(root / "run_b" / "loss_curves.csv");
  return {first.uf1 >= 0.95 && first.uar >= 0.95 && secs < 600.0 && same && first.folds == 6 && first.samples == 48,
          fmt("UF1 %.4f, UAR %.4f, %.1f s per run", first.uf1, first.uar, secs) +
              (same ? ", rerun identical" : ", rerun differs")};
}

std::uint64_t attention_instrumented(const TransformerBlock<float>& block, std::size_t n, std::size_t d, bool first) {
  std::mt19937_64 rng(n);
  const auto x = testutil::random_tensor<float>({1, n, d}, rng);
  NoGradGuard guard;
  flops::Counter counter;
  attention_sublayer(x, block, first);
  return counter.total();
}

Outcome efficiency_suite() {
  ModelConfig plain;
  plain.integration.pairs_per_block = pairs_for_rate(plain, 0.0);
  ModelConfig merged;
  merged.integration.pairs_per_block = pairs_for_rate(merged, 0.3);
  const auto a = cost_report(plain);
  const auto b = cost_report(merged);
  const std::uint64_t ia = instrumented_flops(plain), ib = instrumented_flops(merged);

  // attention-only count from the instrumented sublayer at each block's token count
  const std::size_t d = static_cast<std::size_t>(plain.tokenizer.model_dim);
  std::mt19937_64 rng(5);
  const TransformerBlock<float> block(d, plain.heads, plain.resolved_head_dim(), rng);
  std::int64_t measured_delta = 0;
  for (std::size_t l = 0; l < a.tokens_per_block.size(); ++l) {
    const bool first = l == 0 && !plain.uniform_residual;
    measured_delta += static_cast<std::int64_t>(attention_instrumented(block, a.tokens_per_block[l], d, first)) -
                      static_cast<std::int64_t>(attention_instrumented(block, b.tokens_per_block[l], d, first));
  }
  const auto predicted = static_cast<std::int64_t>(a.attention_flops) - static_cast<std::int64_t>(b.attention_flops);
  const double delta_err = std::abs(double(predicted - measured_delta)) / double(measured_delta);
  const double total_err = std::max(std::abs(double(a.flops_per_sample) - double(ia)) / double(ia),
                                    std::abs(double(b.flops_per_sample) - double(ib)) / double(ib));
  const bool ok = merged.integration.pairs_per_block == 1 && predicted > 0 && delta_err <= 0.02 &&
                  total_err <= 0.02 && a.param_count == b.param_count;
  return {ok, fmt("attention FLOPs %.4g -> %.4g (-%.2f%%)", double(a.attention_flops), double(b.attention_flops),
                  100.0 * double(predicted) / double(a.attention_flops)) +
                  fmt(", closed-form vs instrumented: delta %.3g, totals %.3g, params %.0f both", delta_err,
                      total_err, double(a.param_count))};
}

Outcome sweep_suite(const fs::path& root) {
  SyntheticSpec spec;
  spec.subjects = 3;
  spec.samples_per_subject = 3;
  spec.image_size = 48;
  spec.seed = 3;
  generate_synthetic(spec, root / "sweep_data");
  const auto csv = root / "sweep.csv";
  const std::string cmd = std::string(EPIR_CLI_PATH) + " sweep --quiet --manifest " +
                          (root / "sweep_data" / "manifest.csv").string() +
                          " --axis num_blocks --values 3,7,13,1 --set model_dim=16 --set epochs=2 --set batch_size=8"
                          " --out " + csv.string() + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0 || !fs::exists(csv)) return {false, "sweep exited with code " + std::to_string(code)};
  const auto rows = parse_csv(read_text(csv));
  bool ok = rows.size() == 5 && rows[0].size() == 10;
  const std::vector<std::string> values = {"3", "7", "13", "1"};
  for (std::size_t i = 1; ok && i < rows.size(); ++i) {
    ok = rows[i].size() == 10 && rows[i][0] == "num_blocks" && rows[i][1] == values[i - 1];
    if (!ok) break;
    if (i < 4) {
      ok = rows[i][2] == "ok" && rows[i][3] == values[i - 1] && std::stod(rows[i][5]) >= 0.0 &&
           std::stod(rows[i][5]) <= 1.0 && std::stoull(rows[i][7]) > 0;
    } else {
      ok = rows[i][2] == "infeasible" && !rows[i][9].empty();
    }
  }
  return {ok, std::to_string(rows.size() - 1) + " rows written, value 1 flagged infeasible"};
}

}  // namespace

int main() {
  testutil::TempDir scratch("acceptance");
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {2, gradient_suite},
      {3, mask_suite},
      {4, merge_suite},
      {5, rollout_suite},
      {6, metric_suite},
      {7, flow_suite},
      {8, [&] { return learning_suite(scratch.path()); }},
      {9, efficiency_suite},
      {10, [&] { return sweep_suite(scratch.path()); }},
  };
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
