#include "ranger/policy_map.hpp"

#include "ranger/errors.hpp"

namespace ranger {

std::string describe(const Decision& d) {
  struct Visitor {
    std::string operator()(const Allow&) const { return "allow"; }
    std::string operator()(const SwitchEpt& s) const { return "switch:" + std::to_string(s.target.value); }
    std::string operator()(const RedirectToFake&) const { return "redirect"; }
    std::string operator()(const TemporaryGrant&) const { return "grant"; }
    std::string operator()(const Deny& x) const { return "deny:" + x.reason; }
  };
  return std::visit(Visitor{}, d);
}

MapState MapState::init(const OsLayout& os) {
  MapState m;
  m.layout_.add_fixed(os.kernel_code, RegionTag::OsKernelCode);
  for (const GpaRange& r : os.structures) m.layout_.add_fixed(r, RegionTag::OsStructure);
  for (const GpaRange& r : os.other_drivers) m.layout_.add_fixed(r, RegionTag::OtherDriver);

  // Default EPT: the OS kernel, OS structures and other drivers are fully
  // accessible; everything else keeps the fresh-EPT attributes.
  Ept def = create_ept(m.default_ept_);
  def.set_region_perms(os.kernel_code, kRwx);
  for (const GpaRange& r : os.structures) def.set_region_perms(r, kRwx);
  for (const GpaRange& r : os.other_drivers) def.set_region_perms(r, kRwx);
  m.epts_.emplace(m.default_ept_, std::move(def));
  m.current_ept_ = m.default_ept_;
  return m;
}

void MapState::set_current_ept(EptId id) {
  if (!has_ept(id)) throw SimulationError("unknown EPT " + std::to_string(id.value));
  current_ept_ = id;
}

Ept& MapState::ept(EptId id) {
  auto it = epts_.find(id);
  if (it == epts_.end()) throw SimulationError("unknown EPT " + std::to_string(id.value));
  return it->second;
}

const Ept& MapState::ept(EptId id) const { return const_cast<MapState*>(this)->ept(id); }

std::vector<const Ept*> MapState::epts() const {
  std::vector<const Ept*> out;
  out.reserve(epts_.size());
  for (const auto& [_, e] : epts_) out.push_back(&e);
  return out;
}

const EnclaveRecord& MapState::enclave(EnclaveId id) const {
  const EnclaveRecord* e = layout_.enclave(id);
  if (!e) throw SimulationError("unknown enclave " + std::to_string(id.value));
  return *e;
}

Perms MapState::base_claim_perms(Pfn page, EptId ept) const {
  const bool in_default = ept == default_ept_;
  const RegionKind k = layout_.kind_at(page.base());
  switch (k.tag) {
    case RegionTag::OsKernelCode: return kRwx;
    case RegionTag::OsStructure:
    case RegionTag::Process: return in_default ? kRwx : kNone;
    case RegionTag::OtherDriver: return in_default ? kRwx : kRw;
    case RegionTag::EnclaveImage: return enclave(*k.enclave).ept_id == ept ? kRwx : kNone;
    default: return kRw;
  }
}

Perms MapState::pool_page_perms(Pfn page, EptId ept) const {
  const std::vector<Owner> owners = layout_.page_owners(page);
  if (owners.empty()) return base_claim_perms(page, ept);
  // Bytes of two owners on one page: nobody gets in without a trap.
  if (owners.size() > 1) return kNone;
  if (!owners.front()) return kRw;
  return enclave(*owners.front()).ept_id == ept ? kRwx : kNone;
}

void MapState::apply_pool_page(Pfn page) {
  for (auto& [id, e] : epts_) e.set_page_perms(page, pool_page_perms(page, id));
}

EnclaveId MapState::on_driver_load(Gpa image_base, std::uint64_t image_size) {
  const EptId id{next_ept_};
  const GpaRange image{image_base, image_size};
  const EnclaveRecord& rec = layout_.add_enclave(image, id);
  ++next_ept_;

  Ept ept = create_ept(id);
  for (const GpaRange& r : layout_.fixed_ranges(RegionTag::OsKernelCode)) ept.set_region_perms(r, kRwx);
  for (const GpaRange& r : layout_.fixed_ranges(RegionTag::OsStructure)) ept.set_region_perms(r, kNone);
  for (const GpaRange& r : layout_.fixed_ranges(RegionTag::OtherDriver)) ept.set_region_perms(r, kRw);
  for (const auto& [_, proc] : layout_.processes()) {
    for (const GpaRange& r : proc.regions) ept.set_region_perms(r, kNone);
  }
  for (const auto& [other_id, other] : layout_.enclaves()) {
    if (other_id != rec.id) ept.set_region_perms(other.image, kNone);
  }
  for (std::uint64_t p : layout_.pool_pages()) ept.set_page_perms(Pfn{p}, pool_page_perms(Pfn{p}, id));
  ept.set_region_perms(image, kRwx);

  // The new image disappears from every pre-existing EPT.
  for (auto& [_, e] : epts_) e.set_region_perms(image, kNone);
  epts_.emplace(id, std::move(ept));
  return rec.id;
}

void MapState::on_driver_unload(EnclaveId id) {
  const EnclaveRecord rec = enclave(id);
  const std::vector<AllocatedPool> dropped = layout_.remove_enclave(id);
  epts_.erase(rec.ept_id);
  for (auto& [_, e] : epts_) e.set_region_perms(rec.image, kRw);
  for (const AllocatedPool& p : dropped) {
    const PageSpan span = page_span(p.range);
    for (std::uint64_t pg = span.first; pg < span.last; ++pg) apply_pool_page(Pfn{pg});
  }
  if (current_ept_ == rec.ept_id) current_ept_ = default_ept_;
}

AllocResult MapState::on_alloc(Gpa caller, Gpa base, std::uint64_t size) {
  const AllocatedPool& pool = layout_.add_pool(caller, GpaRange{base, size});
  const AllocResult result{pool.id, pool.owner};
  const PageSpan span = page_span(pool.range);
  for (std::uint64_t p = span.first; p < span.last; ++p) apply_pool_page(Pfn{p});
  return result;
}

void MapState::on_free(Gpa base) {
  const AllocatedPool removed = layout_.remove_pool(base);
  const PageSpan span = page_span(removed.range);
  for (std::uint64_t p = span.first; p < span.last; ++p) apply_pool_page(Pfn{p});
}

void MapState::on_process_create(ProcessId pid, const std::vector<GpaRange>& regions) {
  layout_.add_process(pid, regions);
  for (auto& [id, e] : epts_) {
    const Perms perms = id == default_ept_ ? kRwx : kNone;
    for (const GpaRange& r : regions) e.set_region_perms(r, perms);
  }
}

void MapState::on_process_exit(ProcessId pid) {
  const ProcessRecord rec = layout_.remove_process(pid);
  for (const GpaRange& r : rec.regions) {
    const PageSpan span = page_span(r);
    for (std::uint64_t p = span.first; p < span.last; ++p) {
      for (auto& [id, e] : epts_) e.set_page_perms(Pfn{p}, base_claim_perms(Pfn{p}, id));
    }
  }
}

Decision MapState::classify_access(EptId current, Gpa src, Gpa dst, Access access) const {
  if (dst.value >= kGpaLimit) return Deny{"destination " + to_hex(dst.value) + " outside guest-physical space"};
  if (!has_ept(current)) return Deny{"unknown current EPT " + std::to_string(current.value)};
  const auto code = layout_.code_owner(src);
  if (!code) return Deny{"source " + to_hex(src.value) + " is not code"};

  const RegionKind target = layout_.kind_at(dst);
  const Owner src_owner = code->owner;
  const bool page_shared = layout_.is_shared(page_of(dst));

  if (access == Access::Execute) {
    switch (target.tag) {
      case RegionTag::EnclaveImage: {
        const EptId home = enclave(*target.enclave).ept_id;
        if (current != home) return SwitchEpt{home};
        break;
      }
      case RegionTag::EnclavePool: {
        // A pool runs only inside its owner's enclave and only for the owner.
        if (src_owner != target.enclave) break;
        const EptId home = enclave(*target.enclave).ept_id;
        if (current != home) return SwitchEpt{home};
        if (page_shared) return TemporaryGrant{};
        break;
      }
      case RegionTag::OsKernelCode:
      case RegionTag::OtherDriver:
      case RegionTag::Unclaimed:
      case RegionTag::UnenclavedPool:
        if (current != default_ept_) return SwitchEpt{default_ept_};
        break;
      default: break;
    }
    return RedirectToFake{};
  }

  // OS code touching OS structures from inside a driver's EPT goes home.
  if ((target.tag == RegionTag::OsStructure || target.tag == RegionTag::Process) &&
      current != default_ept_ && !src_owner) {
    return SwitchEpt{default_ept_};
  }

  // Access exception: the owner's data sits on a page blocked everywhere.
  if (page_shared) {
    const AllocatedPool* pool = layout_.pool_at(dst);
    if (pool && pool->owner == src_owner &&
        (!src_owner || enclave(*src_owner).ept_id == current)) {
      return TemporaryGrant{};
    }
  }
  return RedirectToFake{};
}

}  // namespace ranger
