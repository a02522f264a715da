#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epir/model.hpp"

namespace epir {

struct CostItem {
  std::string stage;
  std::uint64_t flops = 0;
};

struct CostReport {
  std::uint64_t param_count = 0;
  std::uint64_t flops_per_sample = 0;
  std::uint64_t attention_flops = 0;  // attention sublayers across all blocks
  std::uint64_t ffn_flops = 0;
  std::vector<CostItem> breakdown;    // sums to flops_per_sample
  std::vector<std::size_t> tokens_per_block;  // tokens entering each block

  std::string to_json() const;
};

// Closed-form floating-point operation count for one sample, plus the exact
// parameter count of the instantiated model.
CostReport cost_report(const ModelConfig& config);

// Counts the operations issued by one forward pass on a random sample.
std::uint64_t instrumented_flops(const ModelConfig& config, std::uint64_t seed = 1);

}  // namespace epir
