#pragma once

// Who owns which guest-physical bytes: OS regions, enclaved driver images,
// allocated pools and protected EPROCESS regions.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ranger/address_space.hpp"
#include "ranger/ept.hpp"

namespace ranger {

struct EnclaveId {
  std::uint32_t value = 0;
  constexpr auto operator<=>(const EnclaveId&) const = default;
};

struct PoolId {
  std::uint32_t value = 0;
  constexpr auto operator<=>(const PoolId&) const = default;
};

using ProcessId = std::uint32_t;

// nullopt: the OS kernel or a driver that was never enclaved.
using Owner = std::optional<EnclaveId>;

enum class RegionTag : std::uint8_t {
  OsKernelCode,
  OsStructure,
  OtherDriver,
  EnclaveImage,
  EnclavePool,
  UnenclavedPool,
  Process,
  Unclaimed,
};

std::string_view to_string(RegionTag tag);

struct RegionKind {
  RegionTag tag = RegionTag::Unclaimed;
  std::optional<EnclaveId> enclave;
  std::optional<PoolId> pool;
  std::optional<ProcessId> pid;
};

struct AllocatedPool {
  PoolId id;
  GpaRange range;
  Owner owner;
  // Some covering page also hosts bytes of a different owner.
  bool page_shared = false;
};

struct EnclaveRecord {
  EnclaveId id;
  EptId ept_id;
  GpaRange image;
  std::vector<PoolId> drv_allocs;  // allocation order

  Gpa image_base() const { return image.base; }
  Gpa image_end() const { return Gpa{image.end()}; }
};

struct ProcessRecord {
  ProcessId pid = 0;
  std::vector<GpaRange> regions;
};

class RegionLayout {
 public:
  void add_fixed(const GpaRange& range, RegionTag tag);
  EnclaveRecord& add_enclave(const GpaRange& image, EptId ept);
  // Drops the enclave and its pools; returns the pools it owned.
  std::vector<AllocatedPool> remove_enclave(EnclaveId id);

  const AllocatedPool& add_pool(Gpa caller, const GpaRange& range);
  AllocatedPool remove_pool(Gpa base);

  void add_process(ProcessId pid, const std::vector<GpaRange>& regions);
  ProcessRecord remove_process(ProcessId pid);

  // Byte-granular classification. Bytes on a pool page that no pool covers
  // are reported as Unclaimed.
  RegionKind kind_at(Gpa gpa) const;

  // Region tag of a page ignoring pools (images, OS regions, processes).
  RegionTag page_claim(Pfn page) const;
  // Base claim below any process overlay.
  RegionTag base_claim(Pfn page) const;

  // Code owner of an instruction address; nullopt when the address is not
  // code (kernel, other driver, enclave image or enclave pool).
  struct CodeOwner {
    Owner owner;
    RegionTag tag;
  };
  std::optional<CodeOwner> code_owner(Gpa src) const;

  const AllocatedPool* pool_at(Gpa gpa) const;
  const AllocatedPool* pool_by_base(Gpa base) const;
  const AllocatedPool& pool(PoolId id) const;
  std::vector<Owner> page_owners(Pfn page) const;
  bool is_pool_page(Pfn page) const { return page_pools_.contains(page.value); }
  bool is_shared(Pfn page) const { return page_owners(page).size() > 1; }
  std::vector<std::uint64_t> pool_pages() const;

  const EnclaveRecord* enclave(EnclaveId id) const;
  const EnclaveRecord* enclave_by_ept(EptId ept) const;
  const std::map<EnclaveId, EnclaveRecord>& enclaves() const { return enclaves_; }
  const std::map<ProcessId, ProcessRecord>& processes() const { return processes_; }
  const std::map<std::uint64_t, AllocatedPool>& pools() const { return pools_; }
  std::vector<GpaRange> fixed_ranges(RegionTag tag) const;

 private:
  struct Claim {
    std::uint64_t last = 0;  // exclusive page
    RegionTag tag = RegionTag::Unclaimed;
    std::optional<EnclaveId> enclave;
    std::optional<ProcessId> pid;
  };
  using ClaimMap = std::map<std::uint64_t, Claim>;

  static const Claim* find_claim(const ClaimMap& m, std::uint64_t page);
  static bool claims_overlap(const ClaimMap& m, const PageSpan& span);
  bool pool_pages_overlap(const PageSpan& span) const;
  void refresh_sharing(const PageSpan& span);

  ClaimMap claims_;          // fixed regions and enclave images
  ClaimMap process_claims_;  // may overlay OsStructure claims
  std::vector<std::pair<GpaRange, RegionTag>> fixed_;
  std::map<EnclaveId, EnclaveRecord> enclaves_;
  std::map<ProcessId, ProcessRecord> processes_;
  std::map<std::uint64_t, AllocatedPool> pools_;  // by base
  std::map<PoolId, std::uint64_t> pool_base_;
  std::unordered_map<std::uint64_t, std::vector<PoolId>> page_pools_;
  std::uint32_t next_enclave_ = 1;
  std::uint32_t next_pool_ = 1;
};

}  // namespace ranger
