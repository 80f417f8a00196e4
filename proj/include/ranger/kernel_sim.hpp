#pragma once

// Simulated Windows kernel: replays a trace against one protection mode and
// checks confidentiality, integrity, availability and (multi-EPT) oracle
// equivalence along the way.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ranger/address_space.hpp"
#include "ranger/dispatcher.hpp"
#include "ranger/trace.hpp"

namespace ranger {

enum class ProtectionMode : std::uint8_t { Off, SingleEpt, MultiEpt };

std::string_view to_string(ProtectionMode m);
std::optional<ProtectionMode> parse_mode(std::string_view s);

// Abstract ticks; only the ordering between modes is meaningful.
struct CostModel {
  std::uint64_t base_access = 1;
  std::uint64_t vmexit = 2000;
  std::uint64_t ept_switch = 500;
  std::uint64_t mtf_roundtrip = 4000;
  std::uint64_t page_walk_after_flush = 50;

  bool operator==(const CostModel&) const = default;
};

struct SimConfig {
  CostModel cost;
  // Rebuild the reference model and compare every EPT after each event
  // (multi-EPT only).
  bool oracle_checks = true;
  // Treat every Alloc as page-aligned regardless of the trace.
  bool force_page_aligned = false;
  bool keep_log = true;
  // Diagnostics kept in the report; counters are always complete.
  std::size_t max_diagnostics = 32;
};

// Bump allocator over the pool arena. Natural requests pack on 16-byte
// boundaries, so two owners can share a page; PageAligned requests take
// whole pages for themselves.
class SimAllocator {
 public:
  static constexpr std::uint64_t kNaturalAlign = 16;

  explicit SimAllocator(GpaRange arena) : arena_(arena), cursor_(arena.base.value) {}

  GpaRange allocate(std::uint64_t size, Align align);
  void release(const GpaRange& r);
  // Live allocations touching the page.
  std::size_t occupancy(Pfn page) const;

 private:
  GpaRange arena_;
  std::uint64_t cursor_;
  std::map<std::uint64_t, std::size_t> pages_;
};

struct LogRecord {
  std::uint64_t seq = 0;
  std::string actor;
  Gpa src;
  Gpa dst;
  Access access = Access::Read;
  std::uint32_t len = 0;
  bool schedule = false;  // instruction fetch issued by the scheduler
  EptId ept_before;
  EptId ept_after;
  FinalAction action = FinalAction::Allow;
  std::uint32_t violations = 0;
  std::uint32_t switches = 0;
  bool legal = true;
  std::uint64_t ticks = 0;

  bool trapped() const { return violations > 0; }
  std::string decision() const;
};

struct SimCounters {
  VcpuCounters vcpu;
  std::uint64_t events = 0;
  std::uint64_t accesses = 0;
  std::uint64_t schedules = 0;
  std::uint64_t legal_accesses = 0;
  std::uint64_t illegal_accesses = 0;
  std::uint64_t leaks = 0;                 // illegal read saw planted secret bytes
  std::uint64_t nonzero_illegal_reads = 0; // illegal read saw anything but zeros
  std::uint64_t integrity_violations = 0;
  std::uint64_t availability_failures = 0; // legal access did not see true data
  std::uint64_t label_mismatches = 0;      // generator label vs reference model
  std::uint64_t oracle_checks = 0;
  std::uint64_t oracle_mismatches = 0;
  std::uint64_t windows = 0;
  std::uint64_t window_violations = 0;

  bool operator==(const SimCounters&) const = default;
};

struct RegionDigest {
  std::string name;
  GpaRange range;
  std::uint64_t digest = 0;
};

struct RunReport {
  ProtectionMode mode = ProtectionMode::MultiEpt;
  SimConfig config;
  SimCounters counters;
  std::uint64_t modeled_total_ticks = 0;
  std::vector<LogRecord> log;
  std::vector<RegionDigest> digests;
  std::vector<std::string> diagnostics;

  bool violated() const;
  // 0 clean, 2 when a confidentiality, integrity or model check failed.
  int exit_code() const { return violated() ? 2 : 0; }
};

std::uint64_t access_cost(const CostModel& c, std::uint32_t violations, std::uint32_t switches,
                          FinalAction action);

// Throws SimulationError for unresolved references or inconsistent events,
// ConfigError for overlapping regions and LivelockError from the dispatcher.
RunReport run_trace(const Trace& trace, ProtectionMode mode, const SimConfig& config = {});

// Canned scenarios and trace generators.
Trace demo1_trace();
Trace privesc_trace();
Trace gen_benchmark_trace(std::uint64_t n_accesses, Align align, std::uint64_t k = 64);

enum class AlignMix : std::uint8_t { PageAligned, Natural, Mixed };

struct RandomTraceOptions {
  std::uint64_t length = 200;
  double attack_probability = 0.2;
  AlignMix align = AlignMix::Mixed;
};
Trace gen_random_trace(std::uint64_t seed, const RandomTraceOptions& opts = {});

}  // namespace ranger
