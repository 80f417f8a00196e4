#include "doctest.h"
#include "ranger/errors.hpp"
#include "ranger/policy_map.hpp"
#include "ranger/reference_oracle.hpp"
#include "ranger/single_ept.hpp"
#include "ranger/trace.hpp"

using namespace ranger;

namespace {

constexpr Gpa kStub = fixture::kKernelCode.base + fixture::kSchedulerStub;
constexpr Gpa kKernelSrc = fixture::kKernelCode.base + fixture::kKernelRoutine;
constexpr Gpa kASrc = fixture::kDriverA.base + 0x10;
constexpr Gpa kBSrc = fixture::kDriverB.base + 0x10;
constexpr Gpa kArena = fixture::kPoolArena.base;

bool allowed(const AccessPolicy& p, EptId ept, Gpa g, Access a) {
  return std::holds_alternative<Hpa>(p.ept(ept).translate(g, a));
}

// Drives a policy and the reference model with the same events.
struct Mirror {
  MapState map = MapState::init(fixture::os_layout());
  ReferenceOracle oracle{fixture::os_layout(), EptId{0}};

  EptId load(const GpaRange& image) {
    const EnclaveId id = map.on_driver_load(image.base, image.size);
    const EptId ept = map.enclave(id).ept_id;
    oracle.driver_loaded(ept, image);
    return ept;
  }
  void alloc(Gpa caller, const GpaRange& r) {
    map.on_alloc(caller, r.base, r.size);
    oracle.pool_allocated(caller, r);
  }
  void free(Gpa base) {
    map.on_free(base);
    oracle.pool_freed(base);
  }
  std::vector<Mismatch> check() const { return check_against(oracle.rebuild(), map.epts()); }
};

}  // namespace

TEST_CASE("init places the OS in the Default EPT") {
  const MapState m = MapState::init(fixture::os_layout());
  CHECK(m.epts().size() == 1);
  CHECK(m.current_ept() == m.default_ept());
  CHECK(allowed(m, m.default_ept(), kKernelSrc, Access::Execute));
  CHECK(allowed(m, m.default_ept(), fixture::kOtherDrivers[0].base, Access::Read));
  CHECK(allowed(m, m.default_ept(), fixture::kOtherDrivers[1].base, Access::Execute));
  CHECK(allowed(m, m.default_ept(), fixture::kOsStructures.base, Access::Write));
  CHECK_FALSE(allowed(m, m.default_ept(), kArena, Access::Execute));
}

TEST_CASE("init rejects overlapping OS ranges") {
  OsLayout os = fixture::os_layout();
  os.structures.push_back(GpaRange{fixture::kKernelCode.base + 0x8000, 0x1000});
  CHECK_THROWS_AS(MapState::init(os), ConfigError);
}

TEST_CASE("loading drivers isolates their images") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  CHECK_FALSE(allowed(w.map, w.map.default_ept(), fixture::kDriverA.base + 0x10, Access::Execute));
  CHECK(allowed(w.map, a, fixture::kDriverA.base + 0x10, Access::Execute));

  const EptId b = w.load(fixture::kDriverB);
  CHECK_FALSE(allowed(w.map, a, fixture::kDriverB.base, Access::Read));
  CHECK_FALSE(allowed(w.map, b, fixture::kDriverA.base, Access::Read));
  CHECK(allowed(w.map, b, fixture::kOtherDrivers[0].base, Access::Read));
  CHECK_FALSE(allowed(w.map, b, fixture::kOtherDrivers[0].base, Access::Execute));
  CHECK_FALSE(allowed(w.map, b, fixture::kOsStructures.base, Access::Read));
  CHECK(allowed(w.map, b, kKernelSrc, Access::Execute));
  CHECK(w.check().empty());
}

TEST_CASE("unloading reverts the image to default attributes") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  const EptId b = w.load(fixture::kDriverB);
  const EnclaveId a_id = w.map.layout().enclave_by_ept(a)->id;
  w.alloc(kASrc, GpaRange{kArena, 0x1000});
  w.map.set_current_ept(a);

  w.map.on_driver_unload(a_id);
  w.oracle.driver_unloaded(a);
  CHECK_FALSE(w.map.has_ept(a));
  CHECK(w.map.current_ept() == w.map.default_ept());
  CHECK(allowed(w.map, w.map.default_ept(), fixture::kDriverA.base, Access::Read));
  CHECK(w.map.ept(b).entry(page_of(fixture::kDriverA.base)).perms == kRw);
  CHECK(w.map.ept(b).entry(page_of(kArena)).perms == kRw);
  CHECK(w.check().empty());

  CHECK_THROWS_AS(w.map.on_driver_unload(EnclaveId{99}), SimulationError);
}

TEST_CASE("page-aligned pools are private to their owner") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  const EptId b = w.load(fixture::kDriverB);
  w.alloc(kASrc, GpaRange{kArena, 0x100});
  CHECK(allowed(w.map, a, kArena, Access::Read));
  CHECK(allowed(w.map, a, kArena, Access::Execute));
  CHECK_FALSE(allowed(w.map, b, kArena, Access::Read));
  CHECK_FALSE(allowed(w.map, w.map.default_ept(), kArena, Access::Read));
  CHECK(w.check().empty());
}

TEST_CASE("two owners on one page block it in every EPT") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  const EptId b = w.load(fixture::kDriverB);
  w.alloc(kASrc, GpaRange{kArena, 0x100});
  w.alloc(kBSrc, GpaRange{kArena + 0x100, 0x100});
  const Pfn page = page_of(kArena);
  CHECK(w.map.layout().is_shared(page));
  for (const Ept* e : w.map.epts()) CHECK(e->entry(page).perms == kNone);
  CHECK(w.check().empty());

  w.free(kArena);
  CHECK(w.map.ept(b).entry(page).perms == kRwx);
  CHECK(w.map.ept(a).entry(page).perms == kNone);
  CHECK(w.check().empty());

  w.free(kArena + 0x100);
  CHECK(allowed(w.map, w.map.default_ept(), kArena, Access::Read));
  CHECK(w.check().empty());
  CHECK_THROWS_AS(w.map.on_free(kArena), SimulationError);
}

TEST_CASE("an unenclaved owner counts as an owner of a shared page") {
  Mirror w;
  w.load(fixture::kDriverA);
  w.alloc(kKernelSrc, GpaRange{kArena, 0x40});
  CHECK(w.map.ept(w.map.default_ept()).entry(page_of(kArena)).perms == kRw);
  w.alloc(kASrc, GpaRange{kArena + 0x40, 0x40});
  for (const Ept* e : w.map.epts()) CHECK(e->entry(page_of(kArena)).perms == kNone);
  CHECK(w.check().empty());
}

TEST_CASE("EPROCESS regions belong to the Default EPT only") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  const std::vector<GpaRange> regions = fixture::process_regions(4);
  w.map.on_process_create(4, regions);
  w.oracle.process_created(4, regions);
  CHECK(allowed(w.map, w.map.default_ept(), regions[1].base, Access::Write));
  CHECK_FALSE(allowed(w.map, a, regions[1].base, Access::Write));
  const EptId b = w.load(fixture::kDriverB);
  CHECK_FALSE(allowed(w.map, b, regions[0].base, Access::Read));
  CHECK(w.check().empty());

  w.map.on_process_exit(4);
  w.oracle.process_exited(4);
  CHECK(w.map.ept(a).entry(page_of(regions[0].base)).perms == kRw);
  CHECK(w.check().empty());
}

TEST_CASE("process regions inside OS structures revert to the OS attributes") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  const std::vector<GpaRange> regions{GpaRange{fixture::kOsStructures.base + 0x2000, 0x300}};
  w.map.on_process_create(8, regions);
  w.oracle.process_created(8, regions);
  w.map.on_process_exit(8);
  w.oracle.process_exited(8);
  CHECK(w.map.ept(w.map.default_ept()).entry(page_of(regions[0].base)).perms == kRwx);
  CHECK(w.map.ept(a).entry(page_of(regions[0].base)).perms == kNone);
  CHECK(w.check().empty());
}

TEST_CASE("classify_access decisions") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  const EptId b = w.load(fixture::kDriverB);
  const EptId def = w.map.default_ept();
  w.alloc(kBSrc, GpaRange{kArena, 0x1000});
  w.alloc(kASrc, GpaRange{kArena + 0x1000, 0x100});
  w.alloc(kBSrc, GpaRange{kArena + 0x1100, 0x100});

  CHECK(w.map.classify_access(def, kStub, fixture::kDriverA.base + 0x10, Access::Execute) == Decision{SwitchEpt{a}});
  CHECK(w.map.classify_access(a, kASrc, kArena, Access::Write) == Decision{RedirectToFake{}});
  CHECK(w.map.classify_access(a, kASrc, kArena + 0x1000, Access::Read) == Decision{TemporaryGrant{}});
  CHECK(w.map.classify_access(b, kBSrc, kArena + 0x1100, Access::Write) == Decision{TemporaryGrant{}});
  // The owner's grant only opens inside its own EPT.
  CHECK(w.map.classify_access(def, kASrc, kArena + 0x1000, Access::Read) == Decision{RedirectToFake{}});

  CHECK(w.map.classify_access(a, kKernelSrc, fixture::kOsStructures.base, Access::Write) == Decision{SwitchEpt{def}});
  CHECK(w.map.classify_access(a, kASrc, fixture::kOsStructures.base, Access::Write) == Decision{RedirectToFake{}});
  CHECK(w.map.classify_access(a, kASrc, fixture::kOtherDrivers[0].base, Access::Execute) == Decision{SwitchEpt{def}});
  CHECK(w.map.classify_access(b, kBSrc, fixture::kDriverA.base, Access::Read) == Decision{RedirectToFake{}});
  CHECK(w.map.classify_access(a, kASrc, kArena, Access::Execute) == Decision{RedirectToFake{}});
  CHECK(w.map.classify_access(def, kBSrc, kArena, Access::Execute) == Decision{SwitchEpt{b}});
  CHECK(w.map.classify_access(def, kKernelSrc, Gpa{0x6000'0000}, Access::Execute) == Decision{RedirectToFake{}});

  CHECK(std::holds_alternative<Deny>(w.map.classify_access(def, Gpa{0x6000'0000}, kArena, Access::Read)));
  CHECK(std::holds_alternative<Deny>(w.map.classify_access(EptId{42}, kASrc, kArena, Access::Read)));
  CHECK(std::holds_alternative<Deny>(w.map.classify_access(def, kASrc, Gpa{kGpaLimit}, Access::Read)));
  CHECK(describe(Decision{SwitchEpt{a}}) == "switch:1");
}

TEST_CASE("code in an enclave pool executes on behalf of its owner") {
  Mirror w;
  const EptId a = w.load(fixture::kDriverA);
  w.alloc(kASrc, GpaRange{kArena, 0x1000});
  const auto owner = w.map.layout().code_owner(kArena + 0x20);
  REQUIRE(owner);
  CHECK(owner->owner == w.map.layout().enclave_by_ept(a)->id);
  w.alloc(kArena + 0x20, GpaRange{kArena + 0x1000, 0x100});
  CHECK(w.map.ept(a).entry(page_of(kArena + 0x1000)).perms == kRwx);
  CHECK(w.check().empty());
}

TEST_CASE("overlapping claims are rejected") {
  MapState m = MapState::init(fixture::os_layout());
  m.on_driver_load(fixture::kDriverA.base, fixture::kDriverA.size);
  CHECK_THROWS_AS(m.on_driver_load(fixture::kDriverA.base + 0x1000, 0x2000), ConfigError);
  CHECK_THROWS_AS(m.on_alloc(kASrc, fixture::kDriverA.base, 0x10), ConfigError);
  m.on_alloc(kASrc, kArena, 0x100);
  CHECK_THROWS_AS(m.on_alloc(kASrc, kArena + 0x80, 0x100), SimulationError);
}

TEST_CASE("single-EPT baseline blocks pool pages and decides by ownership") {
  SingleEptPolicy p = SingleEptPolicy::init(fixture::os_layout());
  p.on_driver_load(fixture::kDriverA.base, fixture::kDriverA.size);
  p.on_driver_load(fixture::kDriverB.base, fixture::kDriverB.size);
  CHECK(p.epts().size() == 1);
  CHECK(allowed(p, EptId{0}, fixture::kDriverB.base, Access::Read));
  p.on_alloc(kASrc, kArena, 0x100);
  p.on_alloc(kKernelSrc, kArena + 0x1000, 0x100);
  CHECK(p.ept(EptId{0}).entry(page_of(kArena)).perms == kNone);
  CHECK(p.ept(EptId{0}).entry(page_of(kArena + 0x1000)).perms == kRw);
  CHECK(p.classify_access(EptId{0}, kASrc, kArena, Access::Read) == Decision{TemporaryGrant{}});
  CHECK(p.classify_access(EptId{0}, kBSrc, kArena, Access::Read) == Decision{RedirectToFake{}});
  CHECK_THROWS_AS(p.set_current_ept(EptId{1}), SimulationError);
}
