#pragma once

// The multi-EPT memory access policy: one Default EPT hosting the OS and
// other drivers, plus one EPT per enclaved driver. Every event updates the
// attributes of all affected EPTs; violations are classified into EPT
// switches, fake-page redirections and temporary grants.

#include <map>
#include <memory>

#include "ranger/policy.hpp"

namespace ranger {

class MapState final : public AccessPolicy {
 public:
  // Creates the Default EPT and places the OS inside it. Throws ConfigError
  // when the ranges overlap.
  static MapState init(const OsLayout& os);

  MapState(MapState&&) = default;
  MapState& operator=(MapState&&) = default;

  EptId default_ept() const override { return default_ept_; }
  EptId current_ept() const override { return current_ept_; }
  void set_current_ept(EptId id) override;
  bool has_ept(EptId id) const override { return epts_.contains(id); }
  Ept& ept(EptId id) override;
  const Ept& ept(EptId id) const override;
  std::vector<const Ept*> epts() const override;

  Decision classify_access(EptId current, Gpa src, Gpa dst, Access access) const override;

  EnclaveId on_driver_load(Gpa image_base, std::uint64_t image_size) override;
  void on_driver_unload(EnclaveId id) override;
  AllocResult on_alloc(Gpa caller, Gpa base, std::uint64_t size) override;
  void on_free(Gpa base) override;
  void on_process_create(ProcessId pid, const std::vector<GpaRange>& regions) override;
  void on_process_exit(ProcessId pid) override;

  const RegionLayout& layout() const override { return layout_; }
  const EnclaveRecord& enclave(EnclaveId id) const;

 private:
  MapState() = default;

  // Attributes of a page hosting live pool bytes, as seen through `ept`.
  Perms pool_page_perms(Pfn page, EptId ept) const;
  void apply_pool_page(Pfn page);
  // Attributes a page reverts to once nothing but its base claim remains.
  Perms base_claim_perms(Pfn page, EptId ept) const;

  RegionLayout layout_;
  std::map<EptId, Ept> epts_;
  EptId default_ept_{0};
  EptId current_ept_{0};
  std::uint32_t next_ept_ = 1;
};

}  // namespace ranger
