#include "epir/data.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "epir/error.hpp"
#include "epir/image.hpp"
#include "epir/tensor_io.hpp"

namespace epir {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> SampleManifest::subjects() const {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.subject_id);
  return {s.begin(), s.end()};
}

std::filesystem::path SampleManifest::resolve(const std::filesystem::path& p) const {
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

void SampleManifest::validate() const {
  if (class_names.size() < 2) throw DataError("manifest declares fewer than 2 classes");
  std::set<std::string> names(class_names.begin(), class_names.end());
  if (names.size() != class_names.size()) throw DataError("manifest declares duplicate class names");
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.label >= class_names.size()) throw DataError("sample " + r.sample_id + " has an out-of-range label");
    if (!ids.insert(r.sample_id).second) throw DataError("duplicate sample_id " + r.sample_id);
  }
  if (subjects().size() < 2) {
    throw DataError("manifest has fewer than 2 distinct subjects; leave-one-subject-out is infeasible");
  }
}

SampleManifest load_manifest(const std::filesystem::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  SampleManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool have_classes = false;
  std::map<std::string, std::size_t> class_index;
  std::set<std::string> ids;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const std::string body = trim(t.substr(1));
      if (starts_with(body, "classes:")) {
        m.class_names = split(trim(body.substr(8)), ',');
        for (std::size_t i = 0; i < m.class_names.size(); ++i) class_index[m.class_names[i]] = i;
        have_classes = true;
      } else if (starts_with(body, "protocol:")) {
        m.protocol_tag = trim(body.substr(9));
      }
      continue;
    }
    if (!have_header) {
      if (t != "sample_id,subject_id,label,onset_path,apex_path") {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": unexpected CSV header");
      }
      if (!have_classes) throw DataError(path.string() + ": missing '# classes:' line before header");
      have_header = true;
      continue;
    }
    ++row;
    const auto f = split(t, ',');
    const std::string where = path.string() + ": row " + std::to_string(row) + " (line " +
                              std::to_string(line_no) + ")";
    if (f.size() != 5) throw DataError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    for (const auto& field : f)
      if (field.empty()) throw DataError(where + ": empty field");
    auto it = class_index.find(f[2]);
    if (it == class_index.end()) throw DataError(where + ": unknown label '" + f[2] + "'");
    if (!ids.insert(f[0]).second) throw DataError(where + ": duplicate sample_id '" + f[0] + "'");
    SampleRecord r{f[0], f[1], it->second, f[3], f[4]};
    if (check_paths) {
      for (const auto& p : {r.onset_path, r.apex_path})
        if (!std::filesystem::exists(m.resolve(p))) throw DataError(where + ": missing frame " + p.string());
    }
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw DataError(path.string() + ": missing CSV header");
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const SampleManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "# classes: ";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) out << (i ? "," : "") << manifest.class_names[i];
  out << '\n';
  if (!manifest.protocol_tag.empty()) out << "# protocol: " << manifest.protocol_tag << '\n';
  out << "sample_id,subject_id,label,onset_path,apex_path\n";
  for (const auto& r : manifest.records) {
    out << r.sample_id << ',' << r.subject_id << ',' << manifest.class_names.at(r.label) << ','
        << r.onset_path.generic_string() << ',' << r.apex_path.generic_string() << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path.string());
  LabelMap map;
  std::set<std::string> sources;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected source=target");
    }
    std::string src = trim(line.substr(0, eq));
    std::string dst = trim(line.substr(eq + 1));
    if (src.empty() || dst.empty()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty class name");
    if (!sources.insert(src).second) throw DataError(path.string() + ": class '" + src + "' mapped twice");
    map.pairs.emplace_back(std::move(src), std::move(dst));
  }
  return map;
}

LabelMap LabelMap::identity(const std::vector<std::string>& classes) {
  LabelMap m;
  for (const auto& c : classes) m.pairs.emplace_back(c, c);
  return m;
}

std::vector<std::string> LabelMap::target_classes() const {
  std::vector<std::string> out;
  for (const auto& [src, dst] : pairs)
    if (std::find(out.begin(), out.end(), dst) == out.end()) out.push_back(dst);
  return out;
}

SampleManifest apply_label_map(const SampleManifest& manifest, const LabelMap& map) {
  const auto targets = map.target_classes();
  std::vector<std::size_t> remap(manifest.class_names.size());
  for (std::size_t c = 0; c < manifest.class_names.size(); ++c) {
    const auto& name = manifest.class_names[c];
    auto it = std::find_if(map.pairs.begin(), map.pairs.end(), [&](const auto& p) { return p.first == name; });
    if (it == map.pairs.end()) throw DataError("label map has no entry for class '" + name + "'");
    remap[c] = static_cast<std::size_t>(std::find(targets.begin(), targets.end(), it->second) - targets.begin());
  }
  // Only target classes actually reached keep their slot; the index range
  // stays contiguous.
  std::vector<bool> used(targets.size(), false);
  for (auto t : remap) used[t] = true;
  std::vector<std::size_t> compact(targets.size());
  SampleManifest out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!used[t]) continue;
    compact[t] = out.class_names.size();
    out.class_names.push_back(targets[t]);
  }
  out.protocol_tag = manifest.protocol_tag;
  out.base_dir = manifest.base_dir;
  out.records = manifest.records;
  for (auto& r : out.records) r.label = compact[remap[r.label]];
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct Region {
  const char* name;
  double cx, cy;  // fractions of the image side
  double dx, dy;  // unit motion direction
};

constexpr std::array<Region, 7> kRegions{{
    {"brow", 0.50, 0.24, 0.0, -1.0},
    {"mouth_corner", 0.72, 0.72, 0.7071, -0.7071},
    {"cheek", 0.26, 0.60, -1.0, 0.0},
    {"left_eye", 0.30, 0.36, 0.0, 1.0},
    {"chin", 0.50, 0.88, 0.0, 1.0},
    {"right_cheek", 0.76, 0.48, 1.0, 0.0},
    {"nose", 0.50, 0.52, 0.0, -1.0},
}};

struct Wave {
  double amp, fx, fy, phase;
};

struct FaceTexture {
  double base = 0;
  std::vector<Wave> waves;
  double size = 64;

  double operator()(double x, double y) const {
    const double u = x / size;
    const double v = y / size;
    double val = base;
    // Face oval, eyes and mouth as soft blobs.
    const double oval = ((u - 0.5) * (u - 0.5)) / 0.16 + ((v - 0.52) * (v - 0.52)) / 0.22;
    val += 45.0 / (1.0 + std::exp((oval - 1.0) * 12.0));
    auto blob = [&](double cx, double cy, double rx, double ry, double a) {
      const double d = ((u - cx) * (u - cx)) / (rx * rx) + ((v - cy) * (v - cy)) / (ry * ry);
      return a * std::exp(-d);
    };
    val += blob(0.35, 0.40, 0.08, 0.04, -35.0) + blob(0.65, 0.40, 0.08, 0.04, -35.0);
    val += blob(0.50, 0.74, 0.14, 0.04, -30.0);
    for (const auto& w : waves) val += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
    return val;
  }
};

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

std::string two_digit(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

}  // namespace

std::pair<double, double> synthetic_region_center(int c, int size) {
  const auto& r = kRegions[static_cast<std::size_t>(c) % kRegions.size()];
  return {r.cx * size, r.cy * size};
}

SampleManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.subjects < 2) throw ConfigError("synthetic data needs at least 2 subjects");
  if (spec.samples_per_subject < 1) throw ConfigError("synthetic data needs at least 1 sample per subject");
  if (spec.image_size < 24) throw ConfigError("synthetic image_size must be at least 24");

  const auto frames = out_dir / "frames";
  std::filesystem::create_directories(frames);
  const int size = spec.image_size;

  SampleManifest m;
  m.protocol_tag = "synthetic";
  m.base_dir = out_dir;
  for (int c = 0; c < spec.classes; ++c) {
    const auto& r = kRegions[static_cast<std::size_t>(c) % kRegions.size()];
    m.class_names.push_back(c < static_cast<int>(kRegions.size()) ? std::string(r.name)
                                                                  : std::string(r.name) + "_" + std::to_string(c));
  }

  for (int s = 0; s < spec.subjects; ++s) {
    std::mt19937_64 subject_rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(s) * 7919ULL + 17ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FaceTexture tex;
    tex.size = size;
    tex.base = 85.0 + 30.0 * unit(subject_rng);
    for (int k = 0; k < 7; ++k) {
      const double angle = 6.283185307179586 * unit(subject_rng);
      const double freq = 0.25 + 0.45 * unit(subject_rng);
      tex.waves.push_back({9.0 + 8.0 * unit(subject_rng), freq * std::cos(angle), freq * std::sin(angle),
                           6.283185307179586 * unit(subject_rng)});
    }
    const std::string subject_id = "s" + two_digit(s + 1);
    for (int k = 0; k < spec.samples_per_subject; ++k) {
      const int c = k % spec.classes;
      FaceTexture sample_tex = tex;
      for (auto& w : sample_tex.waves) w.phase += 0.6 * (unit(subject_rng) - 0.5);
      const auto& region = kRegions[static_cast<std::size_t>(c) % kRegions.size()];
      const double amp = 1.0 + 2.0 * unit(subject_rng);
      const double cx = region.cx * size + 0.03 * size * (unit(subject_rng) - 0.5);
      const double cy = region.cy * size + 0.03 * size * (unit(subject_rng) - 0.5);
      const double sigma = 0.08 * size;

      GrayImage onset(size, size);
      GrayImage apex(size, size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double g = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma));
          const double dx = amp * region.dx * g;
          const double dy = amp * region.dy * g;
          onset.at(x, y) = to_u8(sample_tex(x, y));
          apex.at(x, y) = to_u8(sample_tex(x - dx, y - dy));
        }
      const std::string id = subject_id + "_" + two_digit(k + 1);
      const std::filesystem::path onset_rel = std::filesystem::path("frames") / (id + "_onset.pgm");
      const std::filesystem::path apex_rel = std::filesystem::path("frames") / (id + "_apex.pgm");
      write_pgm(out_dir / onset_rel, onset);
      write_pgm(out_dir / apex_rel, apex);
      m.records.push_back({id, subject_id, static_cast<std::size_t>(c), onset_rel, apex_rel});
    }
  }
  m.validate();
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

// ---------------------------------------------------------------------------
// Feature cache

std::string FeatureConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "flow_iterations=" << flow.iterations << ";flow_levels=" << flow.pyramid_levels
     << ";flow_poly_n=" << flow.poly_n << ";flow_poly_sigma=" << flow.poly_sigma
     << ";flow_scale=" << flow.pyramid_scale << ";flow_window=" << flow.window_size
     << ";input_size=" << feature_size;
  return os.str();
}

std::string FeatureConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

std::filesystem::path feature_path(const std::filesystem::path& dir, const std::string& sample_id,
                                   const FeatureConfig& config) {
  return dir / (sample_id + "." + config.hash_hex() + ".ept1");
}

namespace {

bool valid_cached(const std::filesystem::path& p, int size) {
  if (!std::filesystem::exists(p)) return false;
  try {
    const auto h = read_ept1_header(p);
    const auto s = static_cast<std::size_t>(size);
    return h.shape == Shape{3, s, s};
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

CacheSummary cache_features(const SampleManifest& manifest, const FeatureConfig& config,
                            const std::filesystem::path& dir, int workers) {
  config.flow.validate();
  if (config.feature_size <= 0) throw ConfigError("input_size must be positive");
  std::filesystem::create_directories(dir);

  enum class Outcome { kWritten, kSkipped, kFailed };
  const std::size_t n = manifest.records.size();
  std::vector<Outcome> outcome(n, Outcome::kFailed);
  std::vector<std::string> messages(n);
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto& r = manifest.records[i];
      const auto out = feature_path(dir, r.sample_id, config);
      if (valid_cached(out, config.feature_size)) {
        outcome[i] = Outcome::kSkipped;
        continue;
      }
      try {
        const auto onset = read_pgm(manifest.resolve(r.onset_path));
        const auto apex = read_pgm(manifest.resolve(r.apex_path));
        const auto field = compute_flow_feature(onset, apex, config.flow, config.feature_size);
        const auto tmp = out.string() + ".tmp";
        save_tensor(tmp, field.to_tensor());
        std::filesystem::rename(tmp, out);
        outcome[i] = Outcome::kWritten;
      } catch (const std::exception& e) {
        messages[i] = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  CacheSummary summary;
  for (std::size_t i = 0; i < n; ++i) {
    switch (outcome[i]) {
      case Outcome::kWritten: ++summary.written; break;
      case Outcome::kSkipped: ++summary.skipped; break;
      case Outcome::kFailed: summary.failures.emplace_back(manifest.records[i].sample_id, messages[i]); break;
    }
  }
  return summary;
}

Tensor<float> load_feature(const std::filesystem::path& dir, const std::string& sample_id,
                           const FeatureConfig& config) {
  const auto p = feature_path(dir, sample_id, config);
  if (!std::filesystem::exists(p)) throw DataError("missing cached feature for sample " + sample_id);
  auto t = load_tensor<float>(p);
  const auto s = static_cast<std::size_t>(config.feature_size);
  if (t.shape() != Shape{3, s, s}) throw DataError("cached feature for " + sample_id + " has wrong shape");
  return t;
}

}  // namespace epir
