#include "epir/metrics.hpp"

#include "epir/error.hpp"
#include "json.hpp"

namespace epir {

ConfusionCounts::ConfusionCounts(std::size_t c)
    : classes(c), tp(c, 0), fp(c, 0), fn(c, 0), support(c, 0), matrix(c * c, 0) {}

std::size_t ConfusionCounts::total() const {
  std::size_t n = 0;
  for (auto s : support) n += s;
  return n;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.classes != classes) throw ContractError("cannot merge confusion counts over different class sets");
  for (std::size_t c = 0; c < classes; ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
    support[c] += other.support[c];
  }
  for (std::size_t i = 0; i < matrix.size(); ++i) matrix[i] += other.matrix[i];
  return *this;
}

void confusion_accumulate(ConfusionCounts& counts, const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& labels) {
  if (predictions.size() != labels.size()) throw ContractError("predictions and labels differ in length");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto t = labels[i];
    const auto p = predictions[i];
    if (t >= counts.classes || p >= counts.classes) {
      throw ContractError("class index out of range at position " + std::to_string(i));
    }
    ++counts.support[t];
    ++counts.matrix[t * counts.classes + p];
    if (t == p) {
      ++counts.tp[t];
    } else {
      ++counts.fn[t];
      ++counts.fp[p];
    }
  }
}

ConfusionCounts confusion_accumulate(const std::vector<std::size_t>& predictions,
                                     const std::vector<std::size_t>& labels, std::size_t classes) {
  ConfusionCounts counts(classes);
  confusion_accumulate(counts, predictions, labels);
  return counts;
}

std::vector<double> per_class_f1(const ConfusionCounts& counts) {
  std::vector<double> out(counts.classes, 0.0);
  for (std::size_t c = 0; c < counts.classes; ++c) {
    const auto denom = 2 * counts.tp[c] + counts.fp[c] + counts.fn[c];
    if (denom > 0) out[c] = 2.0 * static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
  }
  return out;
}

std::vector<double> per_class_recall(const ConfusionCounts& counts) {
  std::vector<double> out(counts.classes, 0.0);
  for (std::size_t c = 0; c < counts.classes; ++c)
    if (counts.support[c] > 0) out[c] = static_cast<double>(counts.tp[c]) / static_cast<double>(counts.support[c]);
  return out;
}

double uf1(const ConfusionCounts& counts) {
  if (counts.classes == 0) throw ContractError("UF1 over zero classes");
  double s = 0.0;
  for (double f : per_class_f1(counts)) s += f;
  return s / static_cast<double>(counts.classes);
}

double uar(const ConfusionCounts& counts) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < counts.classes; ++c) {
    if (counts.support[c] == 0) continue;
    s += static_cast<double>(counts.tp[c]) / static_cast<double>(counts.support[c]);
    ++n;
  }
  if (n == 0) throw DataError("UAR is undefined: no class has any samples");
  return s / static_cast<double>(n);
}

std::string metrics_json(const ConfusionCounts& counts, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["uf1"] = uf1(counts);
  j["uar"] = uar(counts);
  j["per_class_f1"] = per_class_f1(counts);
  j["per_class_recall"] = per_class_recall(counts);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < counts.classes; ++t) {
    std::vector<std::size_t> row(counts.matrix.begin() + t * counts.classes,
                                 counts.matrix.begin() + (t + 1) * counts.classes);
    rows.push_back(row);
  }
  j["confusion_matrix"] = rows;
  j["classes"] = class_names;
  j["samples"] = counts.total();
  return j.dump(2);
}

}  // namespace epir
