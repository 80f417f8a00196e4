#include "ranger/single_ept.hpp"

#include "ranger/errors.hpp"

namespace ranger {

SingleEptPolicy SingleEptPolicy::init(const OsLayout& os) {
  SingleEptPolicy p;
  p.layout_.add_fixed(os.kernel_code, RegionTag::OsKernelCode);
  for (const GpaRange& r : os.structures) p.layout_.add_fixed(r, RegionTag::OsStructure);
  for (const GpaRange& r : os.other_drivers) p.layout_.add_fixed(r, RegionTag::OtherDriver);
  p.ept_.set_region_perms(os.kernel_code, kRwx);
  for (const GpaRange& r : os.structures) p.ept_.set_region_perms(r, kRwx);
  for (const GpaRange& r : os.other_drivers) p.ept_.set_region_perms(r, kRwx);
  return p;
}

void SingleEptPolicy::set_current_ept(EptId id) {
  if (!has_ept(id)) throw SimulationError("unknown EPT " + std::to_string(id.value));
}

Ept& SingleEptPolicy::ept(EptId id) {
  if (!has_ept(id)) throw SimulationError("unknown EPT " + std::to_string(id.value));
  return ept_;
}

const Ept& SingleEptPolicy::ept(EptId id) const { return const_cast<SingleEptPolicy*>(this)->ept(id); }

void SingleEptPolicy::apply_pool_page(Pfn page) {
  const std::vector<Owner> owners = layout_.page_owners(page);
  bool protect = false;
  for (const Owner& o : owners) protect = protect || o.has_value();
  ept_.set_page_perms(page, protect ? kNone : kRw);
}

EnclaveId SingleEptPolicy::on_driver_load(Gpa image_base, std::uint64_t image_size) {
  const GpaRange image{image_base, image_size};
  const EnclaveRecord& rec = layout_.add_enclave(image, ept_.id());
  ept_.set_region_perms(image, kRwx);
  return rec.id;
}

void SingleEptPolicy::on_driver_unload(EnclaveId id) {
  const EnclaveRecord* rec = layout_.enclave(id);
  if (!rec) throw SimulationError("unknown enclave " + std::to_string(id.value));
  const GpaRange image = rec->image;
  const std::vector<AllocatedPool> dropped = layout_.remove_enclave(id);
  ept_.set_region_perms(image, kRw);
  for (const AllocatedPool& p : dropped) {
    const PageSpan span = page_span(p.range);
    for (std::uint64_t pg = span.first; pg < span.last; ++pg) apply_pool_page(Pfn{pg});
  }
}

AllocResult SingleEptPolicy::on_alloc(Gpa caller, Gpa base, std::uint64_t size) {
  const AllocatedPool& pool = layout_.add_pool(caller, GpaRange{base, size});
  const AllocResult result{pool.id, pool.owner};
  const PageSpan span = page_span(pool.range);
  for (std::uint64_t p = span.first; p < span.last; ++p) apply_pool_page(Pfn{p});
  return result;
}

void SingleEptPolicy::on_free(Gpa base) {
  const AllocatedPool removed = layout_.remove_pool(base);
  const PageSpan span = page_span(removed.range);
  for (std::uint64_t p = span.first; p < span.last; ++p) apply_pool_page(Pfn{p});
}

void SingleEptPolicy::on_process_create(ProcessId pid, const std::vector<GpaRange>& regions) {
  layout_.add_process(pid, regions);
  for (const GpaRange& r : regions) ept_.set_region_perms(r, kRwx);
}

void SingleEptPolicy::on_process_exit(ProcessId pid) {
  const ProcessRecord rec = layout_.remove_process(pid);
  for (const GpaRange& r : rec.regions) {
    const bool os = layout_.base_claim(page_of(r.base)) == RegionTag::OsStructure;
    ept_.set_region_perms(r, os ? kRwx : kRw);
  }
}

Decision SingleEptPolicy::classify_access(EptId current, Gpa src, Gpa dst, Access) const {
  if (dst.value >= kGpaLimit) return Deny{"destination " + to_hex(dst.value) + " outside guest-physical space"};
  if (!has_ept(current)) return Deny{"unknown current EPT " + std::to_string(current.value)};
  const auto code = layout_.code_owner(src);
  if (!code) return Deny{"source " + to_hex(src.value) + " is not code"};
  // Legal and illegal attempts alike trap; ownership decides the outcome.
  const AllocatedPool* pool = layout_.pool_at(dst);
  if (pool && pool->owner == code->owner) return TemporaryGrant{};
  return RedirectToFake{};
}

}  // namespace ranger
