#pragma once

// Baseline with a single EPT: every page holding an enclaved driver's
// allocation is blocked, so every access to it traps and is then granted
// (owner) or redirected (anyone else). No EPT switching ever happens.

#include "ranger/policy.hpp"

namespace ranger {

class SingleEptPolicy final : public AccessPolicy {
 public:
  static SingleEptPolicy init(const OsLayout& os);

  SingleEptPolicy(SingleEptPolicy&&) = default;
  SingleEptPolicy& operator=(SingleEptPolicy&&) = default;

  EptId default_ept() const override { return ept_.id(); }
  EptId current_ept() const override { return ept_.id(); }
  void set_current_ept(EptId id) override;
  bool has_ept(EptId id) const override { return id == ept_.id(); }
  Ept& ept(EptId id) override;
  const Ept& ept(EptId id) const override;
  std::vector<const Ept*> epts() const override { return {&ept_}; }

  Decision classify_access(EptId current, Gpa src, Gpa dst, Access access) const override;

  EnclaveId on_driver_load(Gpa image_base, std::uint64_t image_size) override;
  void on_driver_unload(EnclaveId id) override;
  AllocResult on_alloc(Gpa caller, Gpa base, std::uint64_t size) override;
  void on_free(Gpa base) override;
  void on_process_create(ProcessId pid, const std::vector<GpaRange>& regions) override;
  void on_process_exit(ProcessId pid) override;

  const RegionLayout& layout() const override { return layout_; }

 private:
  SingleEptPolicy() = default;
  void apply_pool_page(Pfn page);

  RegionLayout layout_;
  Ept ept_{EptId{0}};
};

}  // namespace ranger
