#pragma once

// Self-contained numeric invariant suite over flow_math, run by `archpilot flow-check`.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace archpilot::flow {

struct CheckResult {
  std::string name;
  bool passed = false;
  double observed = 0.0;  // worst error or statistic seen
  double tolerance = 0.0;
  std::string detail;
};

struct FlowCheckOptions {
  std::uint64_t seed = 0;
  std::size_t identity_draws = 1000;
  std::size_t vector_length = 16;
  std::size_t ks_samples = 100000;
  std::size_t grid_draws = 100000;
};

struct FlowCheckReport {
  std::vector<CheckResult> checks;
  bool passed() const;
};

FlowCheckReport run_flow_checks(const FlowCheckOptions& options = {});

// max_i |a_i - b_i| / max_i |b_i|, with the denominator floored at 1e-300.
double normwise_relative_error(const std::vector<double>& a, const std::vector<double>& b);

nlohmann::json to_json(const CheckResult& r);
nlohmann::json to_json(const FlowCheckReport& r);

}  // namespace archpilot::flow
