#include "ranger/dispatcher.hpp"

#include "ranger/errors.hpp"

namespace ranger {

std::string_view to_string(FinalAction a) {
  switch (a) {
    case FinalAction::Allow: return "allow";
    case FinalAction::Redirect: return "redirect";
    case FinalAction::Grant: return "grant";
  }
  return "?";
}

AccessOutcome Dispatcher::execute_access(VcpuState& vcpu, const AccessRequest& req) {
  if (vcpu.mtf) throw LogicError("access issued while a single-step window is open");
  if (req.dst.value >= kGpaLimit) throw RangeError("destination " + to_hex(req.dst.value) + " out of range");
  const std::uint64_t width = req.access == Access::Write ? req.payload.size()
                              : req.access == Access::Read ? req.len
                                                           : 1;
  if (width == 0) throw SimulationError("zero-length access");
  if (offset_in_page(req.dst) + width > kPageSize) {
    throw RangeError("access at " + to_hex(req.dst.value) + " crosses a page boundary");
  }

  AccessOutcome out;
  out.ept_before = policy_.current_ept();
  for (int attempt = 0;; ++attempt) {
    const EptId current = policy_.current_ept();
    const Translation t = policy_.ept(current).translate(req.dst, req.access);
    if (const Hpa* hpa = std::get_if<Hpa>(&t)) {
      perform(req, *hpa, out);
      out.action = FinalAction::Allow;
      break;
    }

    ++out.violations;
    ++vcpu.counters.ept_violations;
    ++(req.access == Access::Execute ? vcpu.counters.exec_violations : vcpu.counters.rw_violations);

    const Decision d = policy_.classify_access(current, req.src, req.dst, req.access);
    if (const auto* sw = std::get_if<SwitchEpt>(&d)) {
      if (attempt >= kRetryBudget) {
        throw LivelockError("EPT switch loop exceeded " + std::to_string(kRetryBudget) +
                            " retries at " + to_hex(req.dst.value));
      }
      if (switch_ept(vcpu, sw->target)) ++out.switches;
      continue;
    }
    if (std::holds_alternative<RedirectToFake>(d)) {
      open_window(vcpu, req, true, out);
      break;
    }
    if (std::holds_alternative<TemporaryGrant>(d)) {
      open_window(vcpu, req, false, out);
      break;
    }
    if (const auto* deny = std::get_if<Deny>(&d)) throw SimulationError("malformed access: " + deny->reason);
    throw LogicError("policy allowed an access its EPT rejects at " + to_hex(req.dst.value));
  }
  out.ept_after = policy_.current_ept();
  return out;
}

void Dispatcher::open_window(VcpuState& vcpu, const AccessRequest& req, bool to_fake,
                             AccessOutcome& out) {
  const EptId current = policy_.current_ept();
  Ept& ept = policy_.ept(current);
  const Pfn page = page_of(req.dst);
  const EptEntry before = ept.entry(page);

  // Only the faulting access kind is opened up for the single step.
  if (to_fake) ept.set_page_pfn(page, store_.fake_pfn());
  ept.set_page_perms(page, before.perms.with(req.access));
  const MtfKind kind = to_fake ? MtfKind::RestoreAfterFake : MtfKind::RelockAfterGrant;
  vcpu.mtf = MtfPending{current, page, before, kind};

  const Translation t = ept.translate(req.dst, req.access);
  const Hpa* hpa = std::get_if<Hpa>(&t);
  if (!hpa) throw LogicError("single-step window did not open page " + to_hex(page.value));
  perform(req, *hpa, out);
  if (to_fake) {
    out.action = FinalAction::Redirect;
    ++vcpu.counters.redirects;
  } else {
    out.action = FinalAction::Grant;
    ++vcpu.counters.grants;
  }

  handle_mtf(vcpu);
  if (observer_) {
    observer_(WindowRecord{current, page, kind, before, ept.entry(page),
                           store_.is_zero(store_.fake_pfn())});
  }
}

void Dispatcher::handle_mtf(VcpuState& vcpu) {
  if (!vcpu.mtf) throw LogicError("MTF exit delivered with no single step pending");
  const MtfPending pending = *vcpu.mtf;
  policy_.ept(pending.ept).set_entry(pending.page, pending.saved_entry);
  if (pending.kind == MtfKind::RestoreAfterFake) store_.zero(store_.fake_pfn());
  vcpu.mtf.reset();
  ++vcpu.counters.mtf_exits;
}

bool Dispatcher::switch_ept(VcpuState& vcpu, EptId target) {
  if (!policy_.has_ept(target)) throw SimulationError("unknown EPT " + std::to_string(target.value));
  if (target == policy_.current_ept()) return false;
  policy_.set_current_ept(target);
  ++vcpu.counters.ept_switches;
  ++vcpu.counters.tlb_flushes;
  return true;
}

void Dispatcher::perform(const AccessRequest& req, Hpa hpa, AccessOutcome& out) {
  out.hpa = hpa;
  switch (req.access) {
    case Access::Read: out.data = store_.read_bytes(hpa.pfn(), hpa.offset(), req.len); break;
    case Access::Write: store_.write_bytes(hpa.pfn(), hpa.offset(), req.payload); break;
    case Access::Execute: (void)store_.read_bytes(hpa.pfn(), hpa.offset(), 1); break;
  }
}

}  // namespace ranger
