#include "doctest.h"
#include "ranger/errors.hpp"
#include "ranger/kernel_sim.hpp"

using namespace ranger;

namespace {

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

const RegionDigest* find_digest(const RunReport& r, const std::string& name) {
  for (const RegionDigest& d : r.digests)
    if (d.name == name) return &d;
  return nullptr;
}

std::uint64_t count(const RunReport& r, FinalAction a) {
  std::uint64_t n = 0;
  for (const LogRecord& l : r.log) n += l.action == a;
  return n;
}

}  // namespace

TEST_CASE("mode names") {
  for (ProtectionMode m : {ProtectionMode::Off, ProtectionMode::SingleEpt, ProtectionMode::MultiEpt})
    CHECK(parse_mode(to_string(m)) == m);
  CHECK_FALSE(parse_mode("paranoid").has_value());
}

TEST_CASE("access cost") {
  const CostModel c;
  CHECK(access_cost(c, 0, 0, FinalAction::Allow) == 1);
  CHECK(access_cost(c, 1, 1, FinalAction::Allow) == 1 + 2000 + 550);
  CHECK(access_cost(c, 1, 0, FinalAction::Redirect) == 1 + 2000 + 4000);
  CHECK(access_cost(c, 2, 1, FinalAction::Grant) == 1 + 4000 + 550 + 4000);
}

TEST_CASE("allocator packing") {
  SimAllocator a(GpaRange{Gpa{0x5000'0000}, 0x10'0000});
  const GpaRange x = a.allocate(0x18, Align::Natural);
  const GpaRange y = a.allocate(0x10, Align::Natural);
  CHECK(x.base == Gpa{0x5000'0000});
  CHECK(y.base == Gpa{0x5000'0020});
  CHECK(a.occupancy(Pfn{0x50000}) == 2);
  const GpaRange z = a.allocate(0x100, Align::PageAligned);
  CHECK(z.base == Gpa{0x5000'1000});
  a.release(x);
  CHECK(a.occupancy(Pfn{0x50000}) == 1);
  CHECK_THROWS(SimAllocator(GpaRange{Gpa{0x5000'0000}, 0x1000}).allocate(0x2000, Align::PageAligned));
}

TEST_CASE("demo: two drivers under multi-EPT") {
  const RunReport r = run_trace(demo1_trace(), ProtectionMode::MultiEpt);
  CHECK(r.exit_code() == 0);
  CHECK(r.counters.vcpu.redirects == 4);
  CHECK(count(r, FinalAction::Redirect) == 4);
  CHECK(r.counters.leaks == 0);
  CHECK(r.counters.availability_failures == 0);
  CHECK(r.counters.oracle_mismatches == 0);
  CHECK(r.counters.oracle_checks == r.counters.events);
  CHECK(r.counters.label_mismatches == 0);
  CHECK(r.counters.windows == 4);
}

TEST_CASE("demo: two drivers unprotected") {
  const RunReport r = run_trace(demo1_trace(), ProtectionMode::Off);
  CHECK(r.exit_code() == 2);
  CHECK(r.counters.leaks > 0);
  CHECK(r.counters.integrity_violations > 0);
  CHECK(r.counters.vcpu.ept_violations == 0);
}

TEST_CASE("token overwrite") {
  // The token slot starts as the address-phased DEADBEEF pattern.
  const std::uint64_t planted = fnv1a({0xDE, 0xAD, 0xBE, 0xEF, 0xDE, 0xAD, 0xBE, 0xEF});
  const RunReport multi = run_trace(privesc_trace(), ProtectionMode::MultiEpt);
  CHECK(multi.exit_code() == 0);
  CHECK(multi.counters.vcpu.redirects == 1);
  REQUIRE(find_digest(multi, "eprocess:4#1"));
  CHECK(find_digest(multi, "eprocess:4#1")->digest == planted);

  const RunReport off = run_trace(privesc_trace(), ProtectionMode::Off);
  CHECK(off.exit_code() == 2);
  CHECK(off.counters.integrity_violations >= 1);
  CHECK(find_digest(off, "eprocess:4#1")->digest != planted);
}

TEST_CASE("empty trace") {
  for (ProtectionMode m : {ProtectionMode::Off, ProtectionMode::SingleEpt, ProtectionMode::MultiEpt}) {
    const RunReport r = run_trace({}, m);
    CHECK(r.counters == SimCounters{});
    CHECK(r.modeled_total_ticks == 0);
    CHECK(r.exit_code() == 0);
  }
}

TEST_CASE("benchmark trap counts") {
  const Trace t = gen_benchmark_trace(10'000, Align::PageAligned);
  const RunReport multi = run_trace(t, ProtectionMode::MultiEpt, {.oracle_checks = false});
  const RunReport single = run_trace(t, ProtectionMode::SingleEpt);
  const RunReport off = run_trace(t, ProtectionMode::Off);
  // One initial schedule plus a round trip through other0 every 64 reads.
  const std::uint64_t exec = 1 + 2 * ((10'000 - 1) / 64);
  CHECK(exec == 313);
  CHECK(multi.counters.vcpu.exec_violations == exec);
  CHECK(multi.counters.vcpu.rw_violations == 0);
  CHECK(multi.counters.vcpu.ept_violations == exec);
  CHECK(single.counters.vcpu.rw_violations == 10'000);
  CHECK(single.counters.vcpu.grants == 10'000);
  CHECK(single.counters.vcpu.ept_switches == 0);
  CHECK(off.counters.vcpu.ept_violations == 0);
  CHECK(off.modeled_total_ticks < multi.modeled_total_ticks);
  CHECK(multi.modeled_total_ticks < single.modeled_total_ticks);

  const RunReport tiny = run_trace(gen_benchmark_trace(1, Align::PageAligned), ProtectionMode::Off);
  CHECK(tiny.counters.vcpu.ept_violations == 0);
}

TEST_CASE("random traces are deterministic in the seed") {
  CHECK(gen_random_trace(42) == gen_random_trace(42));
  CHECK(gen_random_trace(42) != gen_random_trace(43));
  CHECK(gen_random_trace(5, {.length = 77}).size() >= 77);
}

TEST_CASE("attack probability extremes") {
  const RunReport none = run_trace(gen_random_trace(8, {.attack_probability = 0.0}), ProtectionMode::MultiEpt);
  CHECK(none.counters.illegal_accesses == 0);
  CHECK(none.counters.vcpu.redirects == 0);
  CHECK(none.exit_code() == 0);

  const RunReport all = run_trace(gen_random_trace(8, {.attack_probability = 1.0}), ProtectionMode::MultiEpt);
  CHECK(all.counters.illegal_accesses > 0);
  CHECK(all.counters.label_mismatches == 0);
  CHECK(all.exit_code() == 0);
}

TEST_CASE("legal-only work ends in the same memory with or without protection") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Trace t = gen_random_trace(seed, {.length = 300, .attack_probability = 0.0});
    const RunReport off = run_trace(t, ProtectionMode::Off);
    const RunReport multi = run_trace(t, ProtectionMode::MultiEpt);
    const RunReport single = run_trace(t, ProtectionMode::SingleEpt);
    REQUIRE(off.digests.size() == multi.digests.size());
    for (std::size_t i = 0; i < off.digests.size(); ++i) {
      CHECK(off.digests[i].name == multi.digests[i].name);
      CHECK(off.digests[i].digest == multi.digests[i].digest);
      CHECK(off.digests[i].digest == single.digests[i].digest);
    }
    CHECK(off.exit_code() == 0);
    CHECK(single.exit_code() == 0);
  }
}

TEST_CASE("random attacks are contained in both protected modes") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const Trace t = gen_random_trace(seed, {.length = 200, .attack_probability = 0.4});
    const RunReport multi = run_trace(t, ProtectionMode::MultiEpt);
    CHECK_MESSAGE(multi.exit_code() == 0, "seed " << seed);
    CHECK(multi.counters.label_mismatches == 0);
  }
}

TEST_CASE("bad trace references are reported with the event index") {
  Trace t{Schedule{"ghost"}};
  CHECK_THROWS_AS(run_trace(t, ProtectionMode::MultiEpt), SimulationError);
  try {
    run_trace(t, ProtectionMode::MultiEpt);
  } catch (const SimulationError& e) {
    CHECK(std::string(e.what()).starts_with("event 1: "));
  }
  Trace overlap{LoadDriver{"A", Gpa{0x3000'0000}, 0x2000}, LoadDriver{"B", Gpa{0x3000'1000}, 0x2000}};
  CHECK_THROWS_AS(run_trace(overlap, ProtectionMode::MultiEpt), ConfigError);
}
