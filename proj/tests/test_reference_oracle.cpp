#include "doctest.h"
#include "ranger/policy_map.hpp"
#include "ranger/reference_oracle.hpp"
#include "ranger/trace.hpp"

using namespace ranger;

namespace {

constexpr Gpa kASrc = fixture::kDriverA.base + 0x10;
constexpr Gpa kBSrc = fixture::kDriverB.base + 0x10;
constexpr Gpa kKernelSrc = fixture::kKernelCode.base + fixture::kKernelRoutine;
constexpr Gpa kOtherSrc = fixture::kOtherDrivers[0].base + 0x10;
constexpr Gpa kArena = fixture::kPoolArena.base;

}  // namespace

TEST_CASE("after start-up only the OS is tracked") {
  const ReferenceOracle o(fixture::os_layout(), EptId{0});
  const FlatPolicy f = o.rebuild();
  CHECK(f.epts == std::vector<EptId>{EptId{0}});
  const std::size_t os_pages = (fixture::kKernelCode.size + fixture::kOsStructures.size) / kPageSize +
                               (fixture::kOtherDrivers[0].size + fixture::kOtherDrivers[1].size) / kPageSize;
  CHECK(f.pages.size() == os_pages);
  for (const Perms& p : f.table) CHECK(p == kRwx);
}

TEST_CASE("two isolated drivers") {
  ReferenceOracle o(fixture::os_layout(), EptId{0});
  o.driver_loaded(EptId{1}, fixture::kDriverA);
  o.driver_loaded(EptId{2}, fixture::kDriverB);
  o.pool_allocated(kASrc, GpaRange{kArena, 0x100});
  o.pool_allocated(kBSrc, GpaRange{kArena + 0x1000, 0x100});
  const FlatPolicy f = o.rebuild();

  const Pfn a_img = page_of(fixture::kDriverA.base);
  const Pfn b_img = page_of(fixture::kDriverB.base);
  const Pfn a_pool = page_of(kArena);
  const Pfn b_pool = page_of(kArena + 0x1000);
  const Pfn other = page_of(fixture::kOtherDrivers[0].base);
  const Pfn os = page_of(fixture::kOsStructures.base);
  const Pfn kernel = page_of(fixture::kKernelCode.base);

  // Default EPT
  CHECK(*f.lookup(EptId{0}, kernel) == kRwx);
  CHECK(*f.lookup(EptId{0}, os) == kRwx);
  CHECK(*f.lookup(EptId{0}, other) == kRwx);
  CHECK(*f.lookup(EptId{0}, a_img) == kNone);
  CHECK(*f.lookup(EptId{0}, b_pool) == kNone);
  // EPT for driver A
  CHECK(*f.lookup(EptId{1}, kernel) == kRwx);
  CHECK(*f.lookup(EptId{1}, os) == kNone);
  CHECK(*f.lookup(EptId{1}, other) == kRw);
  CHECK(*f.lookup(EptId{1}, a_img) == kRwx);
  CHECK(*f.lookup(EptId{1}, a_pool) == kRwx);
  CHECK(*f.lookup(EptId{1}, b_img) == kNone);
  CHECK(*f.lookup(EptId{1}, b_pool) == kNone);
  // EPT for driver B mirrors it
  CHECK(*f.lookup(EptId{2}, b_img) == kRwx);
  CHECK(*f.lookup(EptId{2}, b_pool) == kRwx);
  CHECK(*f.lookup(EptId{2}, a_pool) == kNone);

  CHECK(f.lookup(EptId{3}, kernel) == nullptr);
  CHECK(f.lookup(EptId{0}, Pfn{0x60000}) == nullptr);
}

TEST_CASE("shared page is blocked everywhere") {
  ReferenceOracle o(fixture::os_layout(), EptId{0});
  o.driver_loaded(EptId{1}, fixture::kDriverA);
  o.driver_loaded(EptId{2}, fixture::kDriverB);
  o.pool_allocated(kASrc, GpaRange{kArena, 0x100});
  o.pool_allocated(kBSrc, GpaRange{kArena + 0x100, 0x100});
  const FlatPolicy f = o.rebuild();
  for (std::uint32_t e = 0; e < 3; ++e) CHECK(*f.lookup(EptId{e}, page_of(kArena)) == kNone);
}

TEST_CASE("legality predicate") {
  ReferenceOracle o(fixture::os_layout(), EptId{0});
  o.driver_loaded(EptId{1}, fixture::kDriverA);
  o.driver_loaded(EptId{2}, fixture::kDriverB);
  o.pool_allocated(kASrc, GpaRange{kArena, 0x100});
  o.pool_allocated(kBSrc, GpaRange{kArena + 0x100, 0x100});
  o.pool_allocated(kKernelSrc, GpaRange{kArena + 0x1000, 0x100});
  o.process_created(4, fixture::process_regions(4));
  const Gpa token = fixture::process_regions(4)[1].base;

  CHECK(o.legal(kASrc, kArena, Access::Read));
  CHECK(o.legal(kASrc, kArena, Access::Execute));
  CHECK_FALSE(o.legal(kASrc, kArena + 0x100, Access::Read));
  CHECK_FALSE(o.legal(kKernelSrc, kArena, Access::Read));
  CHECK_FALSE(o.legal(kASrc, fixture::kDriverB.base, Access::Read));
  CHECK(o.legal(kASrc, fixture::kDriverB.base, Access::Execute));
  CHECK(o.legal(kASrc, fixture::kDriverA.base, Access::Write));
  CHECK_FALSE(o.legal(kASrc, fixture::kOsStructures.base, Access::Write));
  CHECK(o.legal(kKernelSrc, fixture::kOsStructures.base, Access::Write));
  CHECK(o.legal(kOtherSrc, token, Access::Write));
  CHECK_FALSE(o.legal(kASrc, token, Access::Write));
  CHECK(o.legal(kASrc, fixture::kOtherDrivers[1].base, Access::Write));
  CHECK(o.legal(kKernelSrc, kArena + 0x1000, Access::Write));
  CHECK(o.legal(kASrc, kArena + 0x1000, Access::Read));
  CHECK_FALSE(o.legal(kKernelSrc, kArena + 0x1000, Access::Execute));
  // Slack bytes on the shared page belong to nobody.
  CHECK_FALSE(o.legal(kKernelSrc, kArena + 0x800, Access::Read));
  CHECK(o.legal(kKernelSrc, Gpa{0x6000'0000}, Access::Read));
  CHECK_FALSE(o.legal(kKernelSrc, Gpa{0x6000'0000}, Access::Execute));
  CHECK_FALSE(o.legal(Gpa{0x6000'0000}, kArena, Access::Read));
}

TEST_CASE("a corrupted entry is reported exactly once") {
  MapState m = MapState::init(fixture::os_layout());
  ReferenceOracle o(fixture::os_layout(), EptId{0});
  const EnclaveId id = m.on_driver_load(fixture::kDriverA.base, fixture::kDriverA.size);
  const EptId a = m.enclave(id).ept_id;
  o.driver_loaded(a, fixture::kDriverA);
  m.on_alloc(kASrc, kArena, 0x100);
  o.pool_allocated(kASrc, GpaRange{kArena, 0x100});
  REQUIRE(check_against(o.rebuild(), m.epts()).empty());

  m.ept(a).set_page_perms(page_of(kArena), kRw);
  const std::vector<Mismatch> mism = check_against(o.rebuild(), m.epts());
  REQUIRE(mism.size() == 1);
  CHECK(mism[0].kind == Mismatch::Kind::Attributes);
  CHECK(mism[0].ept == a);
  CHECK(mism[0].page == page_of(kArena));
  CHECK(mism[0].expected == kRwx);

  m.ept(a).set_page_perms(page_of(kArena), kRwx);
  m.ept(a).set_page_pfn(page_of(kArena), Pfn{kPfnLimit - 1});
  const std::vector<Mismatch> frame = check_against(o.rebuild(), m.epts());
  REQUIRE(frame.size() == 1);
  CHECK(frame[0].kind == Mismatch::Kind::Frame);
}

TEST_CASE("untracked pages and EPT sets") {
  MapState m = MapState::init(fixture::os_layout());
  ReferenceOracle o(fixture::os_layout(), EptId{0});
  m.ept(m.default_ept()).set_page_perms(Pfn{0x60000}, kNone);
  CHECK(check_against(o.rebuild(), m.epts()).empty());

  m.on_driver_load(fixture::kDriverA.base, fixture::kDriverA.size);
  const std::vector<Mismatch> extra = check_against(o.rebuild(), m.epts());
  REQUIRE_FALSE(extra.empty());
  CHECK(extra[0].kind == Mismatch::Kind::UnexpectedEpt);

  o.driver_loaded(EptId{1}, fixture::kDriverA);
  o.driver_loaded(EptId{7}, fixture::kDriverB);
  std::vector<EptId> missing;
  for (const Mismatch& mm : check_against(o.rebuild(), m.epts()))
    if (mm.kind == Mismatch::Kind::MissingEpt) missing.push_back(mm.ept);
  CHECK(missing == std::vector<EptId>{EptId{7}});
}
