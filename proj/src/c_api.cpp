#include "epir/epir.h"

#include <cstring>
#include <exception>
#include <string>

#include "epir/cost.hpp"
#include "epir/error.hpp"
#include "epir/pipeline.hpp"

struct epir_config {
  epir::RunConfig value;
};

struct epir_manifest {
  epir::SampleManifest value;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
epir_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return EPIR_OK;
  } catch (const epir::ConfigError& e) {
    g_last_error = e.what();
    return EPIR_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EPIR_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return EPIR_ERR_RUNTIME;
  }
}

epir_status bad_argument(const char* what) {
  g_last_error = std::string("invalid argument: ") + what;
  return EPIR_ERR_ARGUMENT;
}

epir_status copy_out(const std::string& text, char* buffer, size_t size) {
  if (!buffer || size == 0) return bad_argument("empty output buffer");
  const std::size_t n = std::min(text.size(), size - 1);
  std::memcpy(buffer, text.data(), n);
  buffer[n] = '\0';
  return EPIR_OK;
}

epir::LogFn make_log(epir_log_fn log, void* user) {
  if (!log) return {};
  return [log, user](const std::string& msg) { log(msg.c_str(), user); };
}

void fill(epir_metrics* out, const epir::RunSummary& s) {
  if (!out) return;
  out->uf1 = s.uf1;
  out->uar = s.uar;
  out->samples = s.samples;
  out->folds = s.folds;
}

}  // namespace

extern "C" {

const char* epir_last_error(void) { return g_last_error.c_str(); }

const char* epir_version(void) { return "1.0.0"; }

epir_status epir_config_new(epir_config** out) {
  if (!out) return bad_argument("out");
  return guarded([&] { *out = new epir_config{}; });
}

epir_status epir_config_load(const char* path, epir_config** out) {
  if (!path || !out) return bad_argument("path/out");
  return guarded([&] { *out = new epir_config{epir::parse_config(path)}; });
}

epir_status epir_config_set(epir_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return bad_argument("config/key/value");
  return guarded([&] {
    epir::RunConfig next = config->value;
    next.set(key, value);
    next.validate();
    config->value = std::move(next);
  });
}

epir_status epir_config_get(const epir_config* config, const char* key, char* buffer, size_t size) {
  if (!config || !key) return bad_argument("config/key");
  std::string text;
  const auto st = guarded([&] { text = config->value.get(key); });
  return st == EPIR_OK ? copy_out(text, buffer, size) : st;
}

epir_status epir_config_hash(const epir_config* config, char* buffer, size_t size) {
  if (!config) return bad_argument("config");
  if (size < 17) return bad_argument("hash buffer needs 17 bytes");
  return copy_out(config->value.hash_hex(), buffer, size);
}

void epir_config_free(epir_config* config) { delete config; }

epir_status epir_manifest_load(const char* path, const epir_config* config, epir_manifest** out) {
  if (!path || !out) return bad_argument("path/out");
  return guarded([&] {
    const epir::RunConfig defaults;
    *out = new epir_manifest{epir::load_run_manifest(path, config ? config->value : defaults)};
  });
}

size_t epir_manifest_size(const epir_manifest* manifest) { return manifest ? manifest->value.records.size() : 0; }

size_t epir_manifest_num_classes(const epir_manifest* manifest) {
  return manifest ? manifest->value.class_names.size() : 0;
}

size_t epir_manifest_num_subjects(const epir_manifest* manifest) {
  return manifest ? manifest->value.subjects().size() : 0;
}

void epir_manifest_free(epir_manifest* manifest) { delete manifest; }

void epir_synth_defaults(epir_synth_options* options) {
  if (!options) return;
  const epir::SyntheticSpec spec;
  options->classes = spec.classes;
  options->subjects = spec.subjects;
  options->samples_per_subject = spec.samples_per_subject;
  options->image_size = spec.image_size;
  options->seed = spec.seed;
}

epir_status epir_synth(const epir_synth_options* options, const char* out_dir) {
  if (!options || !out_dir) return bad_argument("options/out_dir");
  return guarded([&] {
    epir::SyntheticSpec spec;
    spec.classes = options->classes;
    spec.subjects = options->subjects;
    spec.samples_per_subject = options->samples_per_subject;
    spec.image_size = options->image_size;
    spec.seed = options->seed;
    epir::generate_synthetic(spec, out_dir);
  });
}

epir_status epir_cache(const epir_manifest* manifest, const epir_config* config, const char* cache_dir,
                       epir_cache_summary* summary) {
  if (!manifest || !config || !cache_dir) return bad_argument("manifest/config/cache_dir");
  return guarded([&] {
    const auto s = epir::run_cache(manifest->value, config->value, cache_dir);
    if (summary) *summary = {s.written, s.skipped, s.failures.size()};
    if (!s.failures.empty()) {
      std::string msg = std::to_string(s.failures.size()) + " sample(s) failed:";
      for (const auto& [id, why] : s.failures) msg += "\n  " + id + ": " + why;
      throw epir::DataError(msg);
    }
  });
}

epir_status epir_train(const char* manifest_path, const epir_config* config, const char* run_dir,
                       const char* cache_dir, epir_log_fn log, void* user, epir_metrics* metrics) {
  if (!manifest_path || !config || !run_dir || !cache_dir) return bad_argument("manifest/config/run_dir/cache_dir");
  return guarded([&] {
    fill(metrics, epir::run_train(manifest_path, config->value, run_dir, cache_dir, make_log(log, user)));
  });
}

epir_status epir_eval(const char* run_dir, epir_metrics* metrics) {
  if (!run_dir) return bad_argument("run_dir");
  return guarded([&] { fill(metrics, epir::run_eval(run_dir)); });
}

epir_status epir_sweep(const char* manifest_path, const epir_config* config, const char* axis, const double* values,
                       size_t count, const char* cache_dir, const char* csv_path, epir_log_fn log, void* user) {
  if (!manifest_path || !config || !axis || (!values && count) || !cache_dir || !csv_path) {
    return bad_argument("sweep arguments");
  }
  return guarded([&] {
    epir::run_sweep(manifest_path, config->value, axis, std::vector<double>(values, values + count), cache_dir,
                    csv_path, make_log(log, user));
  });
}

epir_status epir_cost_report(const epir_config* config, int num_classes, const char* json_path, epir_cost* cost) {
  if (!config) return bad_argument("config");
  return guarded([&] {
    auto model = config->value.model;
    model.num_classes = num_classes;
    const auto report = epir::cost_report(model);
    if (cost) {
      cost->params = report.param_count;
      cost->flops = report.flops_per_sample;
      cost->attention_flops = report.attention_flops;
      cost->instrumented_flops = epir::instrumented_flops(model);
    }
    if (json_path) epir::write_text(json_path, report.to_json() + "\n");
  });
}

epir_status epir_visualize(const char* manifest_path, const epir_config* config, const char* cache_dir,
                           const char* sample_id, const char* run_dir, const char* out_json) {
  if (!manifest_path || !config || !cache_dir || !sample_id || !out_json) return bad_argument("visualize arguments");
  return guarded([&] {
    std::optional<std::filesystem::path> run;
    if (run_dir) run = run_dir;
    epir::write_text(out_json, epir::run_visualize(manifest_path, config->value, cache_dir, sample_id, run) + "\n");
  });
}

}  // extern "C"
