#pragma once

// Contract between a memory-access policy and the violation dispatcher.

#include <string>
#include <variant>
#include <vector>

#include "ranger/ept.hpp"
#include "ranger/region_layout.hpp"

namespace ranger {

struct Allow {
  bool operator==(const Allow&) const = default;
};
struct SwitchEpt {
  EptId target;
  bool operator==(const SwitchEpt&) const = default;
};
struct RedirectToFake {
  bool operator==(const RedirectToFake&) const = default;
};
struct TemporaryGrant {
  bool operator==(const TemporaryGrant&) const = default;
};
// Malformed input only; the mechanism itself never faults the guest.
struct Deny {
  std::string reason;
  bool operator==(const Deny&) const = default;
};

using Decision = std::variant<Allow, SwitchEpt, RedirectToFake, TemporaryGrant, Deny>;

std::string describe(const Decision& d);

struct AllocResult {
  PoolId pool;
  Owner owner;  // nullopt: the caller is not enclaved
};

class AccessPolicy {
 public:
  virtual ~AccessPolicy() = default;

  virtual EptId default_ept() const = 0;
  virtual EptId current_ept() const = 0;
  // Throws SimulationError for an EPT that does not exist.
  virtual void set_current_ept(EptId id) = 0;
  virtual bool has_ept(EptId id) const = 0;
  virtual Ept& ept(EptId id) = 0;
  virtual const Ept& ept(EptId id) const = 0;
  virtual std::vector<const Ept*> epts() const = 0;

  // Consulted only after a translation raised an EPT violation.
  virtual Decision classify_access(EptId current, Gpa src, Gpa dst, Access access) const = 0;

  virtual EnclaveId on_driver_load(Gpa image_base, std::uint64_t image_size) = 0;
  virtual void on_driver_unload(EnclaveId id) = 0;
  virtual AllocResult on_alloc(Gpa caller, Gpa base, std::uint64_t size) = 0;
  virtual void on_free(Gpa base) = 0;
  virtual void on_process_create(ProcessId pid, const std::vector<GpaRange>& regions) = 0;
  virtual void on_process_exit(ProcessId pid) = 0;

  virtual const RegionLayout& layout() const = 0;
};

// Initial OS layout handed to a policy at start-up.
struct OsLayout {
  GpaRange kernel_code;
  std::vector<GpaRange> structures;
  std::vector<GpaRange> other_drivers;
};

}  // namespace ranger
