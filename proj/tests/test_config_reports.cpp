#include <algorithm>
#include <set>
#include <string>

#include "doctest.h"
#include "epir/config.hpp"
#include "epir/error.hpp"
#include "epir/reports.hpp"
#include "helpers.hpp"
#include "json.hpp"

using namespace epir;

namespace {

std::string message_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config defaults and parsing") {
  const auto cfg = parse_config_text("");
  CHECK(cfg.model.tokenizer.input_size == 28);
  CHECK(cfg.model.tokenizer.patch_size == 7);
  CHECK(cfg.model.tokenizer.model_dim == 128);
  CHECK(cfg.model.heads == 3);
  CHECK(cfg.model.integration.num_blocks == 6);
  CHECK(cfg.model.extractor.num_blocks_before_dtsm == 6);
  CHECK(cfg.train.learning_rate == 5e-5);
  CHECK(cfg.train.batch_size == 256);
  CHECK(cfg.train.epochs == 300);
  CHECK(cfg.contrastive.alpha == 0.4);
  CHECK(cfg.get("learning_rate") == "5e-05");

  const auto custom = parse_config_text("# comment\nepochs = 40  # inline\n\nlearning_rate=1e-3\nrollout_scope = extractor_only\n");
  CHECK(custom.train.epochs == 40);
  CHECK(custom.train.learning_rate == 1e-3);
  CHECK(custom.model.extractor.rollout_scope == RolloutScope::kExtractorOnly);

  CHECK(message_of("patch_size = 5\n").find("patch") != std::string::npos);
  CHECK(message_of("epochs = 3\ncolour = red\n").find("line 2") != std::string::npos);
  CHECK(message_of("epochs = 3\ncolour = red\n").find("colour") != std::string::npos);
  CHECK(message_of("epochs = ten\n").find("line 1") != std::string::npos);
  CHECK(message_of("epochs\n").find("line 1") != std::string::npos);
  CHECK(message_of("epochs = 1\nepochs = 2\n").find("line 2") != std::string::npos);
  CHECK(message_of("protect_cls = maybe\n") != "");
  CHECK(message_of("epochs = 0\n") != "");
  CHECK(message_of("alpha = 1.2\n") != "");
  CHECK(message_of("rollout_scope = last\n") != "");

  RunConfig rc;
  apply_overrides(rc, {"epochs=5", " heads = 4"});
  CHECK(rc.train.epochs == 5);
  CHECK(rc.model.heads == 4);
  CHECK_THROWS_AS(apply_overrides(rc, {"epochs"}), ConfigError);
}

TEST_CASE("every key round trips through get and set") {
  RunConfig a;
  for (const auto& k : RunConfig::keys()) {
    RunConfig b;
    b.set(k, a.get(k));
    CHECK(b.get(k) == a.get(k));
  }
  CHECK_THROWS_AS(a.get("nope"), ConfigError);
}

TEST_CASE("config hash") {
  const auto a = parse_config_text("epochs = 40\nlearning_rate = 0.001\n");
  const auto b = parse_config_text("learning_rate = 1e-3\n\nepochs=40\n");
  CHECK(a.hash_hex() == b.hash_hex());
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash_hex().size() == 16);
  const auto c = parse_config_text("epochs = 41\nlearning_rate = 0.001\n");
  CHECK(a.hash_hex() != c.hash_hex());
  CHECK(parse_config_text(a.canonical()).hash_hex() == a.hash_hex());
}

TEST_CASE("confusion csv") {
  const auto counts = confusion_accumulate({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 2, 0}, 3);
  const std::vector<std::string> names = {"negative", "positive", "surprise"};
  const auto raw = parse_csv(confusion_csv(counts, names, false));
  REQUIRE(raw.size() == 4);
  CHECK(raw[0] == std::vector<std::string>{"truth", "negative", "positive", "surprise"});
  CHECK(raw[1] == std::vector<std::string>{"negative", "1", "0", "1"});
  CHECK(raw[2] == std::vector<std::string>{"positive", "1", "1", "0"});

  const auto norm = parse_csv(confusion_csv(counts, names, true));
  for (std::size_t r = 1; r < norm.size(); ++r) {
    double sum = 0;
    for (std::size_t c = 1; c < norm[r].size(); ++c) sum += std::stod(norm[r][c]);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(norm[1][1] == "0.5000");

  testutil::TempDir dir("confusion");
  emit_confusion(counts, names, dir.path() / "c.csv", dir.path() / "cn.csv");
  CHECK(read_text(dir.path() / "c.csv") == confusion_csv(counts, names, false));
  CHECK(read_text(dir.path() / "cn.csv") == confusion_csv(counts, names, true));
}

TEST_CASE("csv helpers") {
  CHECK(csv_field("plain") == "plain");
  const auto rows = parse_csv("a,\"b,c\",d\n" + csv_field("say \"hi\", ok") + ",2\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"a", "b,c", "d"});
  CHECK(rows[1][0] == "say \"hi\", ok");

  std::vector<FoldResult> folds(1);
  folds[0].held_out_subject = "s01";
  folds[0].predictions = {{"x1", 1, 0}};
  folds[0].train_loss_curve = {1.0, 0.5};
  const auto pred = parse_csv(predictions_csv(folds, {"a", "b"}));
  CHECK(pred[0] == std::vector<std::string>{"fold", "subject", "sample_id", "predicted", "truth"});
  CHECK(pred[1][2] == "x1");
  CHECK(pred[1][3] == "b");
  CHECK(parse_csv(loss_curves_csv(folds)).size() == 3);
}

TEST_CASE("token cells are conserved through merges") {
  const int grid = 4;
  const auto none = token_cells({}, grid);
  REQUIRE(none.size() == 17);
  CHECK(none[0].empty());
  for (std::size_t i = 1; i < none.size(); ++i) CHECK(none[i].size() == 1);

  std::vector<MergeTrace> traces;
  traces.push_back(MergeTrace::from_pairs(17, true, {{0, 0, 0.9}}));
  traces.push_back(MergeTrace::from_pairs(16, true, {{1, 2, 0.8}, {0, 3, 0.7}}));
  const auto cells = token_cells(traces, grid);
  CHECK(cells.size() == 14);
  CHECK(cells[0].empty());
  std::set<Cell> seen;
  std::size_t total = 0;
  for (const auto& tok : cells)
    for (const auto& c : tok) {
      seen.insert(c);
      ++total;
    }
  CHECK(total == 16);
  CHECK(seen.size() == 16);
  // first merge joins patch 0 (first half) with patch 8 (second half)
  CHECK(traces[0].survivor[1] == 1);
  CHECK(traces[0].survivor[9] == 1);
  const auto first = token_cells({traces[0]}, grid);
  CHECK(first[1] == std::vector<Cell>{{0, 0}, {2, 0}});

  const auto j = nlohmann::json::parse(merge_visualization_json("x", traces, grid, {1, 2, 3}));
  CHECK(j["final_tokens"] == 14);
  CHECK(j["tokens"].size() == 14);
  CHECK(j["selected"].size() == 3);
  CHECK(j["merges"].size() == 2);
}

TEST_CASE("sweep csv") {
  std::vector<SweepRow> rows(2);
  rows[0].value = "3";
  rows[0].total_blocks = 3;
  rows[0].pairs_per_block = 1;
  rows[0].uf1 = 0.5;
  rows[0].uar = 0.25;
  rows[0].flops = 123;
  rows[0].params = 45;
  rows[1].value = "1";
  rows[1].feasible = false;
  rows[1].note = "num_blocks must be at least 2, got 1";
  const auto t = parse_csv(sweep_csv("num_blocks", rows));
  REQUIRE(t.size() == 3);
  CHECK(t[0] == std::vector<std::string>{"axis", "value", "status", "total_blocks", "pairs_per_block", "uf1", "uar",
                                         "flops", "params", "note"});
  CHECK(t[1][0] == "num_blocks");
  CHECK(t[1][2] == "ok");
  CHECK(std::stod(t[1][5]) == 0.5);
  CHECK(t[1][7] == "123");
  CHECK(t[2][2] == "infeasible");
  CHECK(t[2][9] == rows[1].note);
}
