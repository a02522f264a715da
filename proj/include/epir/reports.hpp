#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "epir/integration.hpp"
#include "epir/metrics.hpp"
#include "epir/train.hpp"

namespace epir {

// Header `truth,<class...>`, one row per true class. Normalized rows are
// divided by their support and printed with 4 decimals.
std::string confusion_csv(const ConfusionCounts& counts, const std::vector<std::string>& class_names, bool normalized);
void emit_confusion(const ConfusionCounts& counts, const std::vector<std::string>& class_names,
                    const std::filesystem::path& raw_path, const std::filesystem::path& normalized_path);

// fold,subject,sample_id,predicted,truth
std::string predictions_csv(const std::vector<FoldResult>& folds, const std::vector<std::string>& class_names);
// fold,subject,epoch,loss
std::string loss_curves_csv(const std::vector<FoldResult>& folds);

using Cell = std::pair<int, int>;  // (row, col) in the patch grid

// Patch cells carried by every token leaving the last trace, for one sample.
// Index 0 is the class token when the traces carry one.
std::vector<std::vector<Cell>> token_cells(const std::vector<MergeTrace>& traces, int grid);

std::string merge_visualization_json(const std::string& sample_id, const std::vector<MergeTrace>& traces, int grid,
                                     const std::vector<std::size_t>& selected);

struct SweepRow {
  std::string value;
  bool feasible = true;
  int pairs_per_block = 0;
  int total_blocks = 0;
  double uf1 = 0.0;
  double uar = 0.0;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::string note;
};

// axis,value,status,total_blocks,pairs_per_block,uf1,uar,flops,params,note
std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows);

std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string csv_field(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace epir
