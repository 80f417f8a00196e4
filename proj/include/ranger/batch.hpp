#pragma once

// Many seeded random traces, optionally on several threads. Each worker
// owns its simulations outright; results are merged after all complete.

#include <cstdint>
#include <string>
#include <vector>

#include "ranger/kernel_sim.hpp"

namespace ranger {

struct BatchConfig {
  std::uint64_t first_seed = 1;
  std::uint64_t seeds = 100;
  unsigned jobs = 1;
  RandomTraceOptions trace;
  ProtectionMode mode = ProtectionMode::MultiEpt;
  SimConfig sim;
};

struct BatchFailure {
  std::uint64_t seed = 0;
  std::string reason;
};

struct BatchResult {
  std::uint64_t traces = 0;
  std::uint64_t min_events = 0;
  SimCounters totals;
  std::uint64_t total_ticks = 0;
  std::vector<BatchFailure> failures;  // ascending seed

  bool clean() const { return failures.empty(); }
};

void accumulate(SimCounters& into, const SimCounters& c);

BatchResult run_batch(const BatchConfig& cfg);

}  // namespace ranger
