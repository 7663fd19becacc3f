#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwa/config.hpp"

namespace lwa {

struct FlopsEntry {
  std::string path;
  long long flops = 0;
};

// Hierarchical analytic cost breakdown. image_part covers the encoder and the
// image-side half of each bridge (local attention + global-to-graph map);
// pose_part covers the vertex streams, cross-hand attention and the decoder.
struct FlopsReport {
  std::string convention;
  std::vector<FlopsEntry> entries;
  long long image_part = 0;
  long long pose_part = 0;
  long long total = 0;

  nlohmann::json to_json() const;
  std::string table() const;
};

struct ComplexityScan {
  std::string op;
  std::string variable;
  std::vector<std::size_t> sizes;
  std::vector<long long> flops;
  double exponent = 0.0;

  nlohmann::json to_json() const;
};

using DimMap = std::map<std::string, std::size_t>;
using OpCostFn = std::function<long long(const DimMap&, const FlopsConvention&)>;

// Closed-form per-op costs. Counting is static: nothing here runs a forward.
const std::map<std::string, OpCostFn>& op_cost_registry();
long long op_cost(const std::string& op, const DimMap& dims, const FlopsConvention& conv);

FlopsReport count_flops(const ModelConfig& cfg);

// Sweeps the op's token count (or matmul's n) and fits a log-log slope.
ComplexityScan complexity_scan(const std::string& op_name, const std::vector<std::size_t>& sizes,
                               std::size_t dim = 8,
                               const FlopsConvention& conv = FlopsConvention{});

std::string flops_convention_note(const FlopsConvention& conv);

}  // namespace lwa
