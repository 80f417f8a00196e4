#include "ranger/batch.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <thread>

#include "ranger/errors.hpp"

namespace ranger {

void accumulate(SimCounters& into, const SimCounters& c) {
  VcpuCounters& v = into.vcpu;
  v.ept_violations += c.vcpu.ept_violations;
  v.rw_violations += c.vcpu.rw_violations;
  v.exec_violations += c.vcpu.exec_violations;
  v.ept_switches += c.vcpu.ept_switches;
  v.redirects += c.vcpu.redirects;
  v.grants += c.vcpu.grants;
  v.tlb_flushes += c.vcpu.tlb_flushes;
  v.mtf_exits += c.vcpu.mtf_exits;
  into.events += c.events;
  into.accesses += c.accesses;
  into.schedules += c.schedules;
  into.legal_accesses += c.legal_accesses;
  into.illegal_accesses += c.illegal_accesses;
  into.leaks += c.leaks;
  into.nonzero_illegal_reads += c.nonzero_illegal_reads;
  into.integrity_violations += c.integrity_violations;
  into.availability_failures += c.availability_failures;
  into.label_mismatches += c.label_mismatches;
  into.oracle_checks += c.oracle_checks;
  into.oracle_mismatches += c.oracle_mismatches;
  into.windows += c.windows;
  into.window_violations += c.window_violations;
}

namespace {

struct SeedResult {
  SimCounters counters;
  std::uint64_t ticks = 0;
  std::uint64_t events = 0;
  std::string failure;
};

SeedResult run_seed(const BatchConfig& cfg, std::uint64_t seed) {
  SeedResult out;
  try {
    const Trace trace = gen_random_trace(seed, cfg.trace);
    out.events = trace.size();
    const RunReport r = run_trace(trace, cfg.mode, cfg.sim);
    out.counters = r.counters;
    out.ticks = r.modeled_total_ticks;
    if (r.violated() || r.counters.label_mismatches > 0) {
      out.failure = r.diagnostics.empty() ? "property violation" : r.diagnostics.front();
    }
  } catch (const Error& e) {
    out.failure = e.what();
  }
  return out;
}

}  // namespace

BatchResult run_batch(const BatchConfig& cfg) {
  if (cfg.jobs == 0) throw ConfigError("jobs must be positive");
  std::vector<SeedResult> results(cfg.seeds);
  std::atomic<std::uint64_t> next{0};
  auto worker = [&] {
    for (std::uint64_t i = next++; i < cfg.seeds; i = next++) results[i] = run_seed(cfg, cfg.first_seed + i);
  };
  const unsigned n = std::min<std::uint64_t>(cfg.jobs, std::max<std::uint64_t>(cfg.seeds, 1));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  BatchResult br;
  br.traces = cfg.seeds;
  br.min_events = cfg.seeds == 0 ? 0 : std::numeric_limits<std::uint64_t>::max();
  for (std::uint64_t i = 0; i < cfg.seeds; ++i) {
    const SeedResult& r = results[i];
    accumulate(br.totals, r.counters);
    br.total_ticks += r.ticks;
    br.min_events = std::min(br.min_events, r.events);
    if (!r.failure.empty()) br.failures.push_back({cfg.first_seed + i, r.failure});
  }
  return br;
}

}  // namespace ranger
