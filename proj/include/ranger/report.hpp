#pragma once

// Report rendering, cost-model files and cross-mode comparison.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ranger/kernel_sim.hpp"

namespace ranger {

inline constexpr const char* kReportSchema = "ranger-report/1";

// Keys: base_access, vmexit, ept_switch, mtf_roundtrip,
// page_walk_after_flush. Missing keys keep their defaults; unknown keys and
// negative values are ConfigErrors.
CostModel parse_cost_model(const std::string& json_text);
CostModel load_cost_model(const std::string& path);

std::string report_json(const RunReport& r);
std::string report_text(const RunReport& r);

// Sum of per-access costs recomputed from the decision log alone.
std::uint64_t recompute_ticks(const RunReport& r, const CostModel& c);

struct Comparison {
  std::array<RunReport, 3> runs;  // off, single-ept, multi-ept
  bool ordering_holds = false;
  std::string verdict_line;

  const RunReport& run(ProtectionMode m) const { return runs[static_cast<std::size_t>(m)]; }
};

Comparison compare_modes(const Trace& trace, const SimConfig& cfg);
std::string comparison_table(const Comparison& c);

}  // namespace ranger
