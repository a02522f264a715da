#pragma once

#include <string>
#include <vector>

namespace epir {

struct ConfusionCounts {
  std::size_t classes = 0;
  std::vector<std::size_t> tp, fp, fn, support;
  std::vector<std::size_t> matrix;  // [truth * classes + predicted]

  explicit ConfusionCounts(std::size_t c = 0);
  std::size_t total() const;
  std::size_t at(std::size_t truth, std::size_t predicted) const { return matrix[truth * classes + predicted]; }
  // Counts are additive, so folds can be merged in any order.
  ConfusionCounts& operator+=(const ConfusionCounts& other);
};

ConfusionCounts confusion_accumulate(const std::vector<std::size_t>& predictions,
                                     const std::vector<std::size_t>& labels, std::size_t classes);
void confusion_accumulate(ConfusionCounts& counts, const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& labels);

std::vector<double> per_class_f1(const ConfusionCounts& counts);
// Recall per class; classes without support report 0.
std::vector<double> per_class_recall(const ConfusionCounts& counts);
double uf1(const ConfusionCounts& counts);
double uar(const ConfusionCounts& counts);

// {uf1, uar, per_class_f1, per_class_recall, confusion_matrix, classes}
std::string metrics_json(const ConfusionCounts& counts, const std::vector<std::string>& class_names);

}  // namespace epir
