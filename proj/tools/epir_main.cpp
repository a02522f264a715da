#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epir/epir.h"

namespace {

struct ConfigDeleter {
  void operator()(epir_config* c) const { epir_config_free(c); }
};
struct ManifestDeleter {
  void operator()(epir_manifest* m) const { epir_manifest_free(m); }
};
using ConfigPtr = std::unique_ptr<epir_config, ConfigDeleter>;
using ManifestPtr = std::unique_ptr<epir_manifest, ManifestDeleter>;

int report(epir_status st) {
  if (st == EPIR_OK) return 0;
  std::fprintf(stderr, "epir: %s\n", epir_last_error());
  return st == EPIR_ERR_CONFIG || st == EPIR_ERR_ARGUMENT ? 1 : 2;
}

void print_log(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", path, "key=value run configuration");
    cmd->add_option("--set", overrides, "override one key, e.g. --set epochs=40");
  }

  epir_status build(ConfigPtr& out) const {
    epir_config* raw = nullptr;
    const epir_status st = path.empty() ? epir_config_new(&raw) : epir_config_load(path.c_str(), &raw);
    if (st != EPIR_OK) return st;
    out.reset(raw);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "epir: override '%s' is not key=value\n", kv.c_str());
        return EPIR_ERR_CONFIG;
      }
      const epir_status s = epir_config_set(out.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
      if (s != EPIR_OK) return s;
    }
    return EPIR_OK;
  }
};

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument(item);
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micro-expression recognition from onset/apex optical flow"};
  app.require_subcommand(1);
  app.set_version_flag("--version", epir_version());

  auto* synth = app.add_subcommand("synth", "generate a synthetic onset/apex dataset");
  std::string synth_out;
  epir_synth_options synth_opts;
  epir_synth_defaults(&synth_opts);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", synth_opts.classes, "number of classes")->capture_default_str();
  synth->add_option("--subjects", synth_opts.subjects, "number of subjects")->capture_default_str();
  synth->add_option("--samples", synth_opts.samples_per_subject, "samples per subject")->capture_default_str();
  synth->add_option("--size", synth_opts.image_size, "frame side in pixels")->capture_default_str();
  synth->add_option("--seed", synth_opts.seed, "generator seed")->capture_default_str();

  auto* cache = app.add_subcommand("cache", "compute optical-flow features for a manifest");
  std::string cache_manifest, cache_dir;
  ConfigArgs cache_cfg;
  cache->add_option("--manifest", cache_manifest, "sample manifest CSV")->required();
  cache->add_option("--cache", cache_dir, "feature cache directory")->required();
  cache_cfg.add(cache);

  auto* train = app.add_subcommand("train", "leave-one-subject-out training and evaluation");
  std::string train_manifest, train_out, train_cache;
  bool train_quiet = false;
  ConfigArgs train_cfg;
  train->add_option("--manifest", train_manifest, "sample manifest CSV")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--cache", train_cache, "feature cache directory (default: <out>/cache)");
  train->add_flag("--quiet", train_quiet, "suppress per-epoch progress");
  train_cfg.add(train);

  auto* eval = app.add_subcommand("eval", "re-evaluate a run from its saved fold weights");
  std::string eval_run;
  eval->add_option("--run", eval_run, "run directory written by train")->required();

  auto* sweep = app.add_subcommand("sweep", "LOSO ablation over block count or integration rate");
  std::string sweep_manifest, sweep_axis, sweep_values, sweep_out, sweep_cache;
  bool sweep_quiet = false;
  ConfigArgs sweep_cfg;
  sweep->add_option("--manifest", sweep_manifest, "sample manifest CSV")->required();
  sweep->add_option("--axis", sweep_axis, "num_blocks or integration_rate")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values, e.g. 0,0.3,0.6,0.8")->required();
  sweep->add_option("--out", sweep_out, "output CSV")->required();
  sweep->add_option("--cache", sweep_cache, "feature cache directory (default: next to the CSV)");
  sweep->add_flag("--quiet", sweep_quiet, "suppress progress");
  sweep_cfg.add(sweep);

  auto* cost = app.add_subcommand("cost", "parameter and FLOP accounting");
  int cost_classes = 3;
  std::string cost_json;
  ConfigArgs cost_cfg;
  cost->add_option("--classes", cost_classes, "number of output classes")->capture_default_str();
  cost->add_option("--json", cost_json, "write the full breakdown as JSON");
  cost_cfg.add(cost);

  auto* vis = app.add_subcommand("visualize", "map final tokens back to patch cells for one sample");
  std::string vis_manifest, vis_sample, vis_out, vis_cache, vis_run;
  ConfigArgs vis_cfg;
  vis->add_option("--manifest", vis_manifest, "sample manifest CSV")->required();
  vis->add_option("--sample", vis_sample, "sample id")->required();
  vis->add_option("--out", vis_out, "output JSON")->required();
  vis->add_option("--cache", vis_cache, "feature cache directory")->required();
  vis->add_option("--run", vis_run, "run directory with trained fold weights");
  vis_cfg.add(vis);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  ConfigPtr config;
  if (*synth) {
    const epir_status st = epir_synth(&synth_opts, synth_out.c_str());
    if (st == EPIR_OK) std::printf("wrote %s/manifest.csv\n", synth_out.c_str());
    return report(st);
  }
  if (*cache) {
    if (epir_status st = cache_cfg.build(config); st != EPIR_OK) return report(st);
    epir_manifest* raw = nullptr;
    if (epir_status st = epir_manifest_load(cache_manifest.c_str(), config.get(), &raw); st != EPIR_OK)
      return report(st);
    ManifestPtr manifest(raw);
    epir_cache_summary summary{};
    const epir_status st = epir_cache(manifest.get(), config.get(), cache_dir.c_str(), &summary);
    std::printf("written %zu, skipped %zu, failed %zu\n", summary.written, summary.skipped, summary.failed);
    return report(st);
  }
  if (*train) {
    if (epir_status st = train_cfg.build(config); st != EPIR_OK) return report(st);
    if (train_cache.empty()) train_cache = train_out + "/cache";
    epir_metrics m{};
    const epir_status st = epir_train(train_manifest.c_str(), config.get(), train_out.c_str(), train_cache.c_str(),
                                      train_quiet ? nullptr : print_log, nullptr, &m);
    if (st == EPIR_OK) std::printf("folds %zu, samples %zu, UF1 %.4f, UAR %.4f\n", m.folds, m.samples, m.uf1, m.uar);
    return report(st);
  }
  if (*eval) {
    epir_metrics m{};
    const epir_status st = epir_eval(eval_run.c_str(), &m);
    if (st == EPIR_OK) std::printf("folds %zu, samples %zu, UF1 %.4f, UAR %.4f\n", m.folds, m.samples, m.uf1, m.uar);
    return report(st);
  }
  if (*sweep) {
    if (epir_status st = sweep_cfg.build(config); st != EPIR_OK) return report(st);
    std::vector<double> values;
    try {
      values = parse_values(sweep_values);
    } catch (const std::exception&) {
      std::fprintf(stderr, "epir: --values must be comma-separated numbers, got '%s'\n", sweep_values.c_str());
      return 1;
    }
    if (sweep_cache.empty()) {
      const auto slash = sweep_out.find_last_of('/');
      sweep_cache = (slash == std::string::npos ? std::string(".") : sweep_out.substr(0, slash)) + "/cache";
    }
    const epir_status st = epir_sweep(sweep_manifest.c_str(), config.get(), sweep_axis.c_str(), values.data(),
                                      values.size(), sweep_cache.c_str(), sweep_out.c_str(),
                                      sweep_quiet ? nullptr : print_log, nullptr);
    if (st == EPIR_OK) std::printf("wrote %s\n", sweep_out.c_str());
    return report(st);
  }
  if (*cost) {
    if (epir_status st = cost_cfg.build(config); st != EPIR_OK) return report(st);
    epir_cost c{};
    const epir_status st =
        epir_cost_report(config.get(), cost_classes, cost_json.empty() ? nullptr : cost_json.c_str(), &c);
    if (st == EPIR_OK) {
      std::printf("params %llu\nflops_per_sample %llu\nattention_flops %llu\ninstrumented_flops %llu\n",
                  static_cast<unsigned long long>(c.params), static_cast<unsigned long long>(c.flops),
                  static_cast<unsigned long long>(c.attention_flops),
                  static_cast<unsigned long long>(c.instrumented_flops));
    }
    return report(st);
  }
  if (*vis) {
    if (epir_status st = vis_cfg.build(config); st != EPIR_OK) return report(st);
    const epir_status st = epir_visualize(vis_manifest.c_str(), config.get(), vis_cache.c_str(), vis_sample.c_str(),
                                          vis_run.empty() ? nullptr : vis_run.c_str(), vis_out.c_str());
    if (st == EPIR_OK) std::printf("wrote %s\n", vis_out.c_str());
    return report(st);
  }
  return 1;
}
