#include "doctest.h"
#include "ranger/dispatcher.hpp"
#include "ranger/errors.hpp"
#include "ranger/policy_map.hpp"
#include "ranger/trace.hpp"

using namespace ranger;

namespace {

constexpr Gpa kStub = fixture::kKernelCode.base + fixture::kSchedulerStub;
constexpr Gpa kASrc = fixture::kDriverA.base + 0x10;
constexpr Gpa kBSrc = fixture::kDriverB.base + 0x10;
constexpr Gpa kArena = fixture::kPoolArena.base;
const std::vector<std::uint8_t> kSecret{0xDE, 0xAD, 0xBE, 0xEF};

struct Machine {
  MapState map = MapState::init(fixture::os_layout());
  FrameStore store;
  VcpuState vcpu;
  Dispatcher d{map, store};
  std::vector<WindowRecord> windows;
  EptId a;
  EptId b;

  Machine() {
    a = map.enclave(map.on_driver_load(fixture::kDriverA.base, fixture::kDriverA.size)).ept_id;
    b = map.enclave(map.on_driver_load(fixture::kDriverB.base, fixture::kDriverB.size)).ept_id;
    store.map_range(fixture::kDriverA);
    store.map_range(fixture::kDriverB);
    d.set_window_observer([this](const WindowRecord& w) { windows.push_back(w); });
  }

  void pool(Gpa caller, const GpaRange& r) {
    map.on_alloc(caller, r.base, r.size);
    store.map_range(r);
    store.fill_pattern(r, kSecret);
  }

  AccessOutcome read(Gpa src, Gpa dst, std::uint32_t len = 4) {
    return d.execute_access(vcpu, AccessRequest{src, dst, Access::Read, len, {}});
  }
  AccessOutcome write(Gpa src, Gpa dst, std::vector<std::uint8_t> bytes) {
    return d.execute_access(vcpu, AccessRequest{src, dst, Access::Write, 0, std::move(bytes)});
  }
};

// Two EPTs that each send the other's violations back: a policy cycle.
class PingPong final : public AccessPolicy {
 public:
  PingPong() {
    epts_.emplace_back(EptId{0}, GpaRange{Gpa{0}, kGpaLimit}, kNone);
    epts_.emplace_back(EptId{1}, GpaRange{Gpa{0}, kGpaLimit}, kNone);
  }
  EptId default_ept() const override { return EptId{0}; }
  EptId current_ept() const override { return current_; }
  void set_current_ept(EptId id) override { current_ = id; }
  bool has_ept(EptId id) const override { return id.value < 2; }
  Ept& ept(EptId id) override { return epts_[id.value]; }
  const Ept& ept(EptId id) const override { return epts_[id.value]; }
  std::vector<const Ept*> epts() const override { return {&epts_[0], &epts_[1]}; }
  Decision classify_access(EptId current, Gpa, Gpa, Access) const override {
    return SwitchEpt{EptId{1 - current.value}};
  }
  EnclaveId on_driver_load(Gpa, std::uint64_t) override { return {}; }
  void on_driver_unload(EnclaveId) override {}
  AllocResult on_alloc(Gpa, Gpa, std::uint64_t) override { return {}; }
  void on_free(Gpa) override {}
  void on_process_create(ProcessId, const std::vector<GpaRange>&) override {}
  void on_process_exit(ProcessId) override {}
  const RegionLayout& layout() const override { return layout_; }

 private:
  std::vector<Ept> epts_;
  EptId current_{0};
  RegionLayout layout_;
};

}  // namespace

TEST_CASE("owner reads its private pool without a trap") {
  Machine m;
  m.pool(kASrc, GpaRange{kArena, 0x100});
  m.d.switch_ept(m.vcpu, m.a);
  const AccessOutcome out = m.read(kASrc, kArena);
  CHECK_FALSE(out.trapped());
  CHECK(out.data == kSecret);
  CHECK(m.vcpu.counters.ept_violations == 0);
}

TEST_CASE("foreign read of a pool returns the fake frame") {
  Machine m;
  m.pool(kBSrc, GpaRange{kArena, 0x100});
  m.d.switch_ept(m.vcpu, m.a);
  const EptEntry before = m.map.ept(m.a).entry(page_of(kArena));
  const AccessOutcome out = m.read(kASrc, kArena, 8);
  CHECK(out.redirected());
  CHECK(out.data == std::vector<std::uint8_t>(8, 0));
  CHECK(out.hpa.pfn() == m.store.fake_pfn());
  CHECK(m.store.read_bytes(page_of(kArena), 0, 4) == kSecret);
  CHECK(m.map.ept(m.a).entry(page_of(kArena)) == before);
  CHECK(m.store.is_zero(m.store.fake_pfn()));
  REQUIRE(m.windows.size() == 1);
  CHECK(m.windows[0].before == m.windows[0].after);
  CHECK(m.windows[0].kind == MtfKind::RestoreAfterFake);
  CHECK(m.vcpu.counters.mtf_exits == 1);
  CHECK_FALSE(m.vcpu.mtf.has_value());
}

TEST_CASE("foreign write is discarded with the fake frame") {
  Machine m;
  m.pool(kBSrc, GpaRange{kArena, 0x100});
  m.d.switch_ept(m.vcpu, m.a);
  const AccessOutcome out = m.write(kASrc, kArena, {1, 2, 3, 4});
  CHECK(out.redirected());
  CHECK(m.store.read_bytes(page_of(kArena), 0, 4) == kSecret);
  CHECK(m.store.is_zero(m.store.fake_pfn()));
}

TEST_CASE("scheduling a driver switches to its EPT and then executes") {
  Machine m;
  const AccessOutcome out =
      m.d.execute_access(m.vcpu, AccessRequest{kStub, kASrc, Access::Execute, 1, {}});
  CHECK(out.switched());
  CHECK(out.action == FinalAction::Allow);
  CHECK(out.ept_before == m.map.default_ept());
  CHECK(out.ept_after == m.a);
  CHECK(m.vcpu.counters.exec_violations == 1);
  CHECK(m.vcpu.counters.tlb_flushes == 1);
}

TEST_CASE("granted write on a shared page lands and the page is relocked") {
  Machine m;
  m.pool(kASrc, GpaRange{kArena, 0x100});
  m.pool(kBSrc, GpaRange{kArena + 0x100, 0x100});
  m.d.switch_ept(m.vcpu, m.b);
  const AccessOutcome out = m.write(kBSrc, kArena + 0x100, {9, 9, 9, 9});
  CHECK(out.granted());
  CHECK(m.store.read_bytes(page_of(kArena), 0x100, 4) == std::vector<std::uint8_t>{9, 9, 9, 9});
  CHECK(m.map.ept(m.b).entry(page_of(kArena)).perms == kNone);
  REQUIRE(m.windows.size() == 1);
  CHECK(m.windows[0].kind == MtfKind::RelockAfterGrant);
  CHECK(m.windows[0].before == m.windows[0].after);
}

TEST_CASE("EPT switch counting") {
  Machine m;
  CHECK(m.d.switch_ept(m.vcpu, m.a));
  CHECK(m.d.switch_ept(m.vcpu, m.map.default_ept()));
  CHECK(m.vcpu.counters.ept_switches == 2);
  CHECK(m.vcpu.counters.tlb_flushes == 2);
  CHECK_FALSE(m.d.switch_ept(m.vcpu, m.map.default_ept()));
  CHECK(m.vcpu.counters.ept_switches == 2);
  CHECK_THROWS_AS(m.d.switch_ept(m.vcpu, EptId{77}), SimulationError);
}

TEST_CASE("MTF protocol misuse") {
  Machine m;
  CHECK_THROWS_AS(m.d.handle_mtf(m.vcpu), LogicError);
  m.vcpu.mtf = MtfPending{m.a, page_of(kArena), EptEntry{}, MtfKind::RelockAfterGrant};
  CHECK_THROWS_AS(m.read(kASrc, kArena), LogicError);
}

TEST_CASE("malformed accesses") {
  Machine m;
  m.pool(kASrc, GpaRange{kArena, 0x100});
  CHECK_THROWS_AS(m.read(Gpa{0x6000'0000}, kArena), SimulationError);
  CHECK_THROWS_AS(m.read(kASrc, kArena + 0xFFE, 4), RangeError);
  CHECK_THROWS_AS(m.read(kASrc, kArena, 0), SimulationError);
  CHECK_THROWS_AS(m.read(kASrc, Gpa{kGpaLimit}), RangeError);
}

TEST_CASE("a cycling policy is stopped by the retry budget") {
  PingPong p;
  FrameStore store;
  store.map(Pfn{1});
  Dispatcher d(p, store);
  VcpuState vcpu;
  CHECK_THROWS_AS(d.execute_access(vcpu, AccessRequest{Gpa{0x1000}, Gpa{0x1000}, Access::Read, 4, {}}),
                  LivelockError);
  CHECK(vcpu.counters.ept_switches == Dispatcher::kRetryBudget);
}
