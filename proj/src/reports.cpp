#include "epir/reports.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "epir/error.hpp"
#include "json.hpp"

namespace epir {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw DataError("unterminated quoted CSV field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string confusion_csv(const ConfusionCounts& counts, const std::vector<std::string>& class_names,
                          bool normalized) {
  if (class_names.size() != counts.classes) throw ContractError("class names do not match the confusion counts");
  std::string out = "truth";
  for (const auto& n : class_names) out += "," + csv_field(n);
  out += "\n";
  for (std::size_t t = 0; t < counts.classes; ++t) {
    out += csv_field(class_names[t]);
    for (std::size_t p = 0; p < counts.classes; ++p) {
      if (normalized) {
        const double v = counts.support[t] ? static_cast<double>(counts.at(t, p)) / counts.support[t] : 0.0;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        out += std::string(",") + buf;
      } else {
        out += "," + std::to_string(counts.at(t, p));
      }
    }
    out += "\n";
  }
  return out;
}

void emit_confusion(const ConfusionCounts& counts, const std::vector<std::string>& class_names,
                    const std::filesystem::path& raw_path, const std::filesystem::path& normalized_path) {
  if (counts.total() == 0) throw DataError("no predictions to summarize");
  write_text(raw_path, confusion_csv(counts, class_names, false));
  write_text(normalized_path, confusion_csv(counts, class_names, true));
}

std::string predictions_csv(const std::vector<FoldResult>& folds, const std::vector<std::string>& class_names) {
  std::string out = "fold,subject,sample_id,predicted,truth\n";
  for (std::size_t k = 0; k < folds.size(); ++k)
    for (const auto& p : folds[k].predictions)
      out += std::to_string(k) + "," + csv_field(folds[k].held_out_subject) + "," + csv_field(p.sample_id) + "," +
             csv_field(class_names.at(p.predicted)) + "," + csv_field(class_names.at(p.truth)) + "\n";
  return out;
}

std::string loss_curves_csv(const std::vector<FoldResult>& folds) {
  std::string out = "fold,subject,epoch,loss\n";
  for (std::size_t k = 0; k < folds.size(); ++k)
    for (std::size_t e = 0; e < folds[k].train_loss_curve.size(); ++e) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.8g", folds[k].train_loss_curve[e]);
      out += std::to_string(k) + "," + csv_field(folds[k].held_out_subject) + "," + std::to_string(e + 1) + "," +
             buf + "\n";
    }
  return out;
}

std::vector<std::vector<Cell>> token_cells(const std::vector<MergeTrace>& traces, int grid) {
  const auto n0 = static_cast<std::size_t>(grid * grid);
  const bool has_cls = traces.empty() ? true : traces.front().has_cls;
  const std::size_t base = has_cls ? 1 : 0;
  std::vector<std::vector<Cell>> cells(n0 + base);
  for (std::size_t i = 0; i < n0; ++i)
    cells[i + base].push_back({static_cast<int>(i) / grid, static_cast<int>(i) % grid});
  for (const auto& t : traces) {
    if (t.tokens_before != cells.size()) throw ContractError("merge traces do not chain");
    std::vector<std::vector<Cell>> next(t.tokens_after);
    for (std::size_t i = 0; i < cells.size(); ++i)
      next.at(t.survivor[i]).insert(next[t.survivor[i]].end(), cells[i].begin(), cells[i].end());
    cells = std::move(next);
  }
  return cells;
}

std::string merge_visualization_json(const std::string& sample_id, const std::vector<MergeTrace>& traces, int grid,
                                     const std::vector<std::size_t>& selected) {
  const auto cells = token_cells(traces, grid);
  nlohmann::ordered_json j;
  j["sample_id"] = sample_id;
  j["grid"] = grid;
  j["initial_tokens"] = grid * grid + 1;
  j["final_tokens"] = cells.size();
  nlohmann::json tokens = nlohmann::json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [r, c] : cells[i]) list.push_back({r, c});
    tokens.push_back({{"index", i}, {"cells", list}});
  }
  j["tokens"] = tokens;
  j["selected"] = selected;
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t l = 0; l < traces.size(); ++l) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : traces[l].pairs)
      pairs.push_back({{"t1", p.first}, {"t2", p.second}, {"similarity", p.similarity}});
    blocks.push_back({{"block", l + 1}, {"tokens_after", traces[l].tokens_after}, {"pairs", pairs}});
  }
  j["merges"] = blocks;
  return j.dump(2);
}

std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,value,status,total_blocks,pairs_per_block,uf1,uar,flops,params,note\n";
  for (const auto& r : rows) {
    char metrics[64] = "";
    if (r.feasible) std::snprintf(metrics, sizeof(metrics), "%.6f,%.6f", r.uf1, r.uar);
    else std::snprintf(metrics, sizeof(metrics), ",");
    out += csv_field(axis) + "," + csv_field(r.value) + "," + (r.feasible ? "ok" : "infeasible") + "," +
           std::to_string(r.total_blocks) + "," + std::to_string(r.pairs_per_block) + "," + metrics + "," +
           (r.feasible ? std::to_string(r.flops) : "") + "," + (r.feasible ? std::to_string(r.params) : "") + "," +
           csv_field(r.note) + "\n";
  }
  return out;
}

}  // namespace epir
