#include "epir/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "epir/error.hpp"

namespace epir {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("key '" + key + "' expects a number, got '" + text + "'");
  }
  return value;
}

int parse_int(const std::string& key, const std::string& text) { return parse_number<int>(key, text); }
double parse_double(const std::string& key, const std::string& text) { return parse_number<double>(key, text); }

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + text + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field int_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_int(k, v); },
          [member](const RunConfig& c) { return std::to_string(member(c)); }};
}

template <typename M>
Field double_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); },
          [member](const RunConfig& c) { return fmt(member(c)); }};
}

template <typename M>
Field bool_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["input_size"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         c.features.feature_size = c.model.tokenizer.input_size = parse_int(k, v);
                       },
                       [](const RunConfig& c) { return std::to_string(c.model.tokenizer.input_size); }};
    t["patch_size"] = int_field([](auto& c) -> auto& { return c.model.tokenizer.patch_size; });
    t["shift_offset"] = int_field([](auto& c) -> auto& { return c.model.tokenizer.shift_offset; });
    t["model_dim"] = int_field([](auto& c) -> auto& { return c.model.tokenizer.model_dim; });
    t["heads"] = int_field([](auto& c) -> auto& { return c.model.heads; });
    t["head_dim"] = int_field([](auto& c) -> auto& { return c.model.head_dim; });
    t["integration_blocks"] = int_field([](auto& c) -> auto& { return c.model.integration.num_blocks; });
    t["pairs_per_block"] = int_field([](auto& c) -> auto& { return c.model.integration.pairs_per_block; });
    t["protect_cls"] = bool_field([](auto& c) -> auto& { return c.model.integration.protect_cls; });
    t["extractor_blocks"] = int_field([](auto& c) -> auto& { return c.model.extractor.num_blocks_before_dtsm; });
    t["rollout_scope"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                            if (v == "all_projected") {
                              c.model.extractor.rollout_scope = RolloutScope::kAllProjected;
                            } else if (v == "extractor_only") {
                              c.model.extractor.rollout_scope = RolloutScope::kExtractorOnly;
                            } else {
                              throw ConfigError("key '" + k + "' expects all_projected or extractor_only, got '" + v +
                                                "'");
                            }
                          },
                          [](const RunConfig& c) {
                            return std::string(c.model.extractor.rollout_scope == RolloutScope::kAllProjected
                                                   ? "all_projected"
                                                   : "extractor_only");
                          }};
    t["uniform_residual"] = bool_field([](auto& c) -> auto& { return c.model.uniform_residual; });
    t["flow_levels"] = int_field([](auto& c) -> auto& { return c.features.flow.pyramid_levels; });
    t["flow_scale"] = double_field([](auto& c) -> auto& { return c.features.flow.pyramid_scale; });
    t["flow_window"] = int_field([](auto& c) -> auto& { return c.features.flow.window_size; });
    t["flow_iterations"] = int_field([](auto& c) -> auto& { return c.features.flow.iterations; });
    t["flow_poly_n"] = int_field([](auto& c) -> auto& { return c.features.flow.poly_n; });
    t["flow_poly_sigma"] = double_field([](auto& c) -> auto& { return c.features.flow.poly_sigma; });
    t["epochs"] = int_field([](auto& c) -> auto& { return c.train.epochs; });
    t["learning_rate"] = double_field([](auto& c) -> auto& { return c.train.learning_rate; });
    t["batch_size"] = int_field([](auto& c) -> auto& { return c.train.batch_size; });
    t["adam_beta1"] = double_field([](auto& c) -> auto& { return c.train.beta1; });
    t["adam_beta2"] = double_field([](auto& c) -> auto& { return c.train.beta2; });
    t["adam_eps"] = double_field([](auto& c) -> auto& { return c.train.adam_eps; });
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   c.train.seed = parse_number<std::uint64_t>(k, v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }};
    t["alpha"] = double_field([](auto& c) -> auto& { return c.contrastive.alpha; });
    t["workers"] = int_field([](auto& c) -> auto& { return c.workers; });
    t["label_map"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.label_map = v; },
                      [](const RunConfig& c) { return c.label_map; }};
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.get(*this);
}

void RunConfig::validate() const {
  features.flow.validate();
  if (features.feature_size != model.tokenizer.input_size) throw ConfigError("feature size and input_size differ");
  if (features.feature_size < 4) throw ConfigError("input_size must be at least 4");
  model.validate();
  train.validate();
  contrastive.validate();
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + "=" + field.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  cfg.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                        std::to_string(it->second));
    }
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    config.set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
  config.validate();
}

}  // namespace epir
