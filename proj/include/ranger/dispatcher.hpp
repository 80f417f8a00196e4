#pragma once

// EPT-violation dispatch for a single virtual CPU.
//
// An access is translated through the current EPT. On a violation the policy
// classifies it and the dispatcher carries the decision out:
//   SwitchEpt       load the target EPT pointer (TLB flush) and retry;
//   RedirectToFake  point the page at the fake frame, permit the access
//                   kind, single-step it, then restore the entry;
//   TemporaryGrant  permit the access kind on the real frame, single-step,
//                   then restore the entry.
// The single step and its MTF exit are one synchronous step here.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ranger/address_space.hpp"
#include "ranger/ept.hpp"
#include "ranger/policy.hpp"

namespace ranger {

enum class MtfKind : std::uint8_t { RestoreAfterFake, RelockAfterGrant };

struct MtfPending {
  EptId ept;
  Pfn page;
  EptEntry saved_entry;
  MtfKind kind = MtfKind::RestoreAfterFake;
};

struct VcpuCounters {
  std::uint64_t ept_violations = 0;
  std::uint64_t rw_violations = 0;
  std::uint64_t exec_violations = 0;
  std::uint64_t ept_switches = 0;
  std::uint64_t redirects = 0;
  std::uint64_t grants = 0;
  std::uint64_t tlb_flushes = 0;
  std::uint64_t mtf_exits = 0;

  bool operator==(const VcpuCounters&) const = default;
};

// The EPT pointer itself belongs to the policy (it must follow driver
// unloads); the vCPU keeps the single-step state and the counters.
struct VcpuState {
  std::optional<MtfPending> mtf;
  VcpuCounters counters;
};

struct AccessRequest {
  Gpa src;
  Gpa dst;
  Access access = Access::Read;
  std::uint32_t len = 4;               // read length
  std::vector<std::uint8_t> payload;   // write bytes
};

enum class FinalAction : std::uint8_t { Allow, Redirect, Grant };

std::string_view to_string(FinalAction a);

struct AccessOutcome {
  std::vector<std::uint8_t> data;  // bytes read (Read only)
  Hpa hpa;                         // where the access landed
  EptId ept_before;
  EptId ept_after;
  FinalAction action = FinalAction::Allow;
  std::uint32_t violations = 0;
  std::uint32_t switches = 0;

  bool trapped() const { return violations > 0; }
  bool switched() const { return switches > 0; }
  bool redirected() const { return action == FinalAction::Redirect; }
  bool granted() const { return action == FinalAction::Grant; }
};

// One single-step window as observed from outside: the leaf entry read
// before the dispatcher touched it and after the MTF exit restored it.
struct WindowRecord {
  EptId ept;
  Pfn page;
  MtfKind kind;
  EptEntry before;
  EptEntry after;
  bool fake_zero_after = true;
};

class Dispatcher {
 public:
  static constexpr int kRetryBudget = 4;

  using WindowObserver = std::function<void(const WindowRecord&)>;

  Dispatcher(AccessPolicy& policy, FrameStore& store) : policy_(policy), store_(store) {}

  void set_window_observer(WindowObserver obs) { observer_ = std::move(obs); }

  AccessOutcome execute_access(VcpuState& vcpu, const AccessRequest& req);
  void handle_mtf(VcpuState& vcpu);
  // Returns false (and counts nothing) when target is already current.
  bool switch_ept(VcpuState& vcpu, EptId target);

 private:
  void perform(const AccessRequest& req, Hpa hpa, AccessOutcome& out);
  void open_window(VcpuState& vcpu, const AccessRequest& req, bool to_fake, AccessOutcome& out);

  AccessPolicy& policy_;
  FrameStore& store_;
  WindowObserver observer_;
};

}  // namespace ranger
