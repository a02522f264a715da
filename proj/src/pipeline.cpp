#include "epir/pipeline.hpp"

#include <cmath>

#include "epir/cost.hpp"
#include "epir/error.hpp"
#include "json.hpp"

namespace epir {

namespace fs = std::filesystem;

namespace {

RunSummary summarize(const ConfusionCounts& counts, const std::vector<std::string>& classes, std::size_t folds) {
  RunSummary s;
  s.uf1 = uf1(counts);
  s.uar = uar(counts);
  s.samples = counts.total();
  s.folds = folds;
  s.metrics_json = metrics_json(counts, classes);
  return s;
}

SampleManifest absolute_paths(SampleManifest m) {
  for (auto& r : m.records) {
    r.onset_path = fs::absolute(m.resolve(r.onset_path));
    r.apex_path = fs::absolute(m.resolve(r.apex_path));
  }
  return m;
}

std::string fold_dir_name(std::size_t k) { return "fold_" + std::to_string(k); }

}  // namespace

SampleManifest load_run_manifest(const fs::path& manifest_path, const RunConfig& config, bool check_paths) {
  auto m = load_manifest(manifest_path, check_paths);
  if (!config.label_map.empty()) {
    fs::path map_path = config.label_map;
    if (map_path.is_relative() && !config.base_dir.empty()) map_path = config.base_dir / map_path;
    m = apply_label_map(m, LabelMap::load(map_path));
  }
  m.validate();
  return m;
}

ModelConfig model_for(const RunConfig& config, const SampleManifest& manifest) {
  ModelConfig m = config.model;
  m.num_classes = static_cast<int>(manifest.class_names.size());
  m.validate();
  return m;
}

CacheSummary run_cache(const SampleManifest& manifest, const RunConfig& config, const fs::path& cache_dir) {
  config.validate();
  return cache_features(manifest, config.features, cache_dir, config.workers);
}

namespace {

PatchedDataset prepare_data(const SampleManifest& manifest, const RunConfig& config, const fs::path& cache_dir) {
  const auto summary = run_cache(manifest, config, cache_dir);
  if (!summary.failures.empty()) {
    const auto& [id, msg] = summary.failures.front();
    throw DataError(std::to_string(summary.failures.size()) + " sample(s) failed feature extraction; first: " + id +
                    ": " + msg);
  }
  return load_patched(manifest, config.features, config.model.tokenizer, cache_dir);
}

}  // namespace

RunSummary run_train(const fs::path& manifest_path, const RunConfig& config, const fs::path& run_dir,
                     const fs::path& cache_dir, const LogFn& log) {
  config.validate();
  const auto manifest = absolute_paths(load_run_manifest(manifest_path, config));
  const auto model_cfg = model_for(config, manifest);
  const auto data = prepare_data(manifest, config, cache_dir);

  fs::create_directories(run_dir);
  RunConfig saved = config;
  saved.label_map.clear();
  write_text(run_dir / "config.txt", saved.canonical());
  write_manifest(run_dir / "manifest.csv", manifest);

  LosoOptions options;
  options.workers = config.workers;
  options.weights_dir = run_dir / "weights";
  options.log = log;
  const auto result = run_loso(manifest, data, model_cfg, config.train, config.contrastive, options);

  nlohmann::ordered_json meta;
  meta["config_hash"] = config.hash_hex();
  meta["feature_hash"] = config.features.hash_hex();
  meta["seed"] = config.train.seed;
  meta["manifest"] = fs::absolute(manifest_path).generic_string();
  meta["cache_dir"] = fs::absolute(cache_dir).generic_string();
  meta["classes"] = manifest.class_names;
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t k = 0; k < result.folds.size(); ++k)
    folds.push_back({{"index", k}, {"subject", result.folds[k].held_out_subject},
                     {"weights", "weights/" + fold_dir_name(k)}});
  meta["folds"] = folds;
  write_text(run_dir / "run.json", meta.dump(2) + "\n");

  auto summary = summarize(result.counts, manifest.class_names, result.folds.size());
  write_text(run_dir / "metrics.json", summary.metrics_json + "\n");
  emit_confusion(result.counts, manifest.class_names, run_dir / "confusion.csv", run_dir / "confusion_normalized.csv");
  write_text(run_dir / "predictions.csv", predictions_csv(result.folds, manifest.class_names));
  write_text(run_dir / "loss_curves.csv", loss_curves_csv(result.folds));
  return summary;
}

RunSummary run_eval(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "run.json")) throw ConfigError(run_dir.string() + " is not a training run directory");
  const auto config = parse_config(run_dir / "config.txt");
  const auto meta = nlohmann::json::parse(read_text(run_dir / "run.json"));
  const auto manifest = load_manifest(run_dir / "manifest.csv", false);
  const auto model_cfg = model_for(config, manifest);
  const fs::path cache_dir = meta.at("cache_dir").get<std::string>();
  const auto data = load_patched(manifest, config.features, config.model.tokenizer, cache_dir);

  const auto folds = loso_split(manifest);
  std::vector<FoldResult> results;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    EpirModel<float> model(model_cfg, 0);
    model.load(run_dir / "weights" / fold_dir_name(k));
    results.push_back({folds[k].subject, evaluate_fold(model, data, folds[k].test), {}});
  }
  const auto counts = pooled_counts(results, manifest.class_names.size());
  auto summary = summarize(counts, manifest.class_names, folds.size());
  write_text(run_dir / "eval_metrics.json", summary.metrics_json + "\n");
  return summary;
}

int pairs_for_rate(const ModelConfig& model, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("integration rate must lie in [0, 1]");
  if (rate == 0.0) return 0;
  if (model.integration.num_blocks < 1) throw ConfigError("a positive integration rate needs integration blocks");
  const double n = model.tokenizer.num_patches();
  return static_cast<int>(std::lround(rate * n / model.integration.num_blocks));
}

void apply_sweep_value(RunConfig& config, const std::string& axis, double value) {
  if (axis == "num_blocks") {
    if (value != std::floor(value)) throw ConfigError("num_blocks must be an integer");
    const int total = static_cast<int>(value);
    if (total < 2) throw ConfigError("num_blocks must be at least 2 (one extractor block and the final block)");
    const int integration = (total - 1) / 2;
    config.model.integration.num_blocks = integration;
    config.model.extractor.num_blocks_before_dtsm = total - 1 - integration;
  } else if (axis == "integration_rate") {
    config.model.integration.pairs_per_block = pairs_for_rate(config.model, value);
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected num_blocks or integration_rate)");
  }
  config.validate();
}

std::vector<SweepRow> run_sweep(const fs::path& manifest_path, const RunConfig& config, const std::string& axis,
                                const std::vector<double>& values, const fs::path& cache_dir, const fs::path& csv_path,
                                const LogFn& log) {
  if (axis != "num_blocks" && axis != "integration_rate") {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected num_blocks or integration_rate)");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  config.validate();
  const auto manifest = load_run_manifest(manifest_path, config);
  const auto data = prepare_data(manifest, config, cache_dir);

  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    row.value = buf;
    RunConfig cfg = config;
    try {
      apply_sweep_value(cfg, axis, v);
    } catch (const ConfigError& e) {
      row.feasible = false;
      row.note = e.what();
      rows.push_back(row);
      if (log) log(axis + "=" + row.value + ": infeasible (" + row.note + ")");
      continue;
    }
    const auto model_cfg = model_for(cfg, manifest);
    row.total_blocks = static_cast<int>(model_cfg.total_blocks());
    row.pairs_per_block = model_cfg.integration.pairs_per_block;
    const auto cost = cost_report(model_cfg);
    row.flops = cost.flops_per_sample;
    row.params = cost.param_count;
    LosoOptions options;
    options.workers = cfg.workers;
    const auto result = run_loso(manifest, data, model_cfg, cfg.train, cfg.contrastive, options);
    row.uf1 = uf1(result.counts);
    row.uar = uar(result.counts);
    rows.push_back(row);
    if (log) log(axis + "=" + row.value + ": uf1 " + std::to_string(row.uf1) + " uar " + std::to_string(row.uar));
  }
  write_text(csv_path, sweep_csv(axis, rows));
  return rows;
}

std::string run_visualize(const fs::path& manifest_path, const RunConfig& config, const fs::path& cache_dir,
                          const std::string& sample_id, const std::optional<fs::path>& run_dir) {
  config.validate();
  auto manifest = load_run_manifest(manifest_path, config);
  std::size_t index = manifest.records.size();
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].sample_id == sample_id) index = i;
  if (index == manifest.records.size()) throw DataError("sample '" + sample_id + "' is not in the manifest");

  SampleManifest one = manifest;
  one.records = {manifest.records[index]};
  const auto summary = run_cache(one, config, cache_dir);
  if (!summary.failures.empty()) throw DataError(sample_id + ": " + summary.failures.front().second);
  const auto data = load_patched(one, config.features, config.model.tokenizer, cache_dir);

  const auto model_cfg = model_for(config, manifest);
  EpirModel<float> model(model_cfg, config.train.seed);
  if (run_dir) {
    const auto folds = loso_split(manifest);
    for (std::size_t k = 0; k < folds.size(); ++k)
      if (folds[k].subject == manifest.records[index].subject_id)
        model.load(*run_dir / "weights" / fold_dir_name(k));
  }
  NoGradGuard guard;
  const std::size_t idx = 0;
  const auto fwd = model.forward(data.batch(std::span<const std::size_t>(&idx, 1)));
  std::vector<MergeTrace> traces;
  for (const auto& block : fwd.traces) traces.push_back(block.at(0));
  return merge_visualization_json(sample_id, traces, model_cfg.tokenizer.grid(), fwd.selected.at(0));
}

}  // namespace epir
