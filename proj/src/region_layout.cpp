#include "ranger/region_layout.hpp"

#include <algorithm>
#include <set>

#include "ranger/errors.hpp"

namespace ranger {

std::string_view to_string(RegionTag tag) {
  switch (tag) {
    case RegionTag::OsKernelCode: return "os_kernel_code";
    case RegionTag::OsStructure: return "os_structure";
    case RegionTag::OtherDriver: return "other_driver";
    case RegionTag::EnclaveImage: return "enclave_image";
    case RegionTag::EnclavePool: return "enclave_pool";
    case RegionTag::UnenclavedPool: return "unenclaved_pool";
    case RegionTag::Process: return "process";
    case RegionTag::Unclaimed: return "unclaimed";
  }
  return "?";
}

namespace {

std::string describe(const GpaRange& r) { return "[" + to_hex(r.base.value) + ", " + to_hex(r.end()) + ")"; }

}  // namespace

const RegionLayout::Claim* RegionLayout::find_claim(const ClaimMap& m, std::uint64_t page) {
  auto it = m.upper_bound(page);
  if (it == m.begin()) return nullptr;
  --it;
  return page < it->second.last ? &it->second : nullptr;
}

bool RegionLayout::claims_overlap(const ClaimMap& m, const PageSpan& span) {
  auto it = m.lower_bound(span.first);
  if (it != m.end() && it->first < span.last) return true;
  if (it == m.begin()) return false;
  --it;
  return it->second.last > span.first;
}

bool RegionLayout::pool_pages_overlap(const PageSpan& span) const {
  for (std::uint64_t p = span.first; p < span.last; ++p) {
    if (page_pools_.contains(p)) return true;
  }
  return false;
}

void RegionLayout::add_fixed(const GpaRange& range, RegionTag tag) {
  const PageSpan span = page_span(range);
  if (claims_overlap(claims_, span) || claims_overlap(process_claims_, span) ||
      pool_pages_overlap(span)) {
    throw ConfigError("region " + describe(range) + " overlaps an existing region");
  }
  claims_.emplace(span.first, Claim{span.last, tag, std::nullopt, std::nullopt});
  fixed_.emplace_back(range, tag);
}

std::vector<GpaRange> RegionLayout::fixed_ranges(RegionTag tag) const {
  std::vector<GpaRange> out;
  for (const auto& [r, t] : fixed_) {
    if (t == tag) out.push_back(r);
  }
  return out;
}

EnclaveRecord& RegionLayout::add_enclave(const GpaRange& image, EptId ept) {
  const PageSpan span = page_span(image);
  if (claims_overlap(claims_, span) || claims_overlap(process_claims_, span) ||
      pool_pages_overlap(span)) {
    throw ConfigError("driver image " + describe(image) + " overlaps an existing region");
  }
  const EnclaveId id{next_enclave_++};
  claims_.emplace(span.first, Claim{span.last, RegionTag::EnclaveImage, id, std::nullopt});
  auto [it, _] = enclaves_.emplace(id, EnclaveRecord{id, ept, image, {}});
  return it->second;
}

std::vector<AllocatedPool> RegionLayout::remove_enclave(EnclaveId id) {
  auto it = enclaves_.find(id);
  if (it == enclaves_.end()) throw SimulationError("unknown enclave " + std::to_string(id.value));
  std::vector<AllocatedPool> dropped;
  const std::vector<PoolId> allocs = it->second.drv_allocs;
  for (PoolId pid : allocs) dropped.push_back(remove_pool(pool(pid).range.base));
  claims_.erase(page_span(it->second.image).first);
  enclaves_.erase(it);
  return dropped;
}

std::optional<RegionLayout::CodeOwner> RegionLayout::code_owner(Gpa src) const {
  if (src.value >= kGpaLimit) return std::nullopt;
  if (const Claim* c = find_claim(claims_, page_of(src).value)) {
    switch (c->tag) {
      case RegionTag::OsKernelCode:
      case RegionTag::OtherDriver: return CodeOwner{std::nullopt, c->tag};
      case RegionTag::EnclaveImage: return CodeOwner{c->enclave, c->tag};
      default: return std::nullopt;
    }
  }
  if (const AllocatedPool* p = pool_at(src); p && p->owner) {
    return CodeOwner{p->owner, RegionTag::EnclavePool};
  }
  return std::nullopt;
}

const AllocatedPool& RegionLayout::add_pool(Gpa caller, const GpaRange& range) {
  if (range.size == 0) throw SimulationError("zero-sized allocation");
  const PageSpan span = page_span(range);
  if (claims_overlap(claims_, span) || claims_overlap(process_claims_, span)) {
    throw ConfigError("pool " + describe(range) + " overlaps a non-pool region");
  }
  auto next = pools_.lower_bound(range.base.value);
  if (next != pools_.end() && next->second.range.overlaps(range)) {
    throw SimulationError("pool " + describe(range) + " overlaps a live pool");
  }
  if (next != pools_.begin() && std::prev(next)->second.range.overlaps(range)) {
    throw SimulationError("pool " + describe(range) + " overlaps a live pool");
  }

  Owner owner;
  if (auto co = code_owner(caller)) owner = co->owner;

  const PoolId id{next_pool_++};
  auto [it, _] = pools_.emplace(range.base.value, AllocatedPool{id, range, owner, false});
  pool_base_.emplace(id, range.base.value);
  for (std::uint64_t p = span.first; p < span.last; ++p) page_pools_[p].push_back(id);
  if (owner) enclaves_.at(*owner).drv_allocs.push_back(id);
  refresh_sharing(span);
  return it->second;
}

AllocatedPool RegionLayout::remove_pool(Gpa base) {
  auto it = pools_.find(base.value);
  if (it == pools_.end()) throw SimulationError("no live pool at " + to_hex(base.value));
  const AllocatedPool removed = it->second;
  const PageSpan span = page_span(removed.range);
  for (std::uint64_t p = span.first; p < span.last; ++p) {
    auto& ids = page_pools_[p];
    std::erase(ids, removed.id);
    if (ids.empty()) page_pools_.erase(p);
  }
  if (removed.owner) {
    if (auto e = enclaves_.find(*removed.owner); e != enclaves_.end()) {
      std::erase(e->second.drv_allocs, removed.id);
    }
  }
  pool_base_.erase(removed.id);
  pools_.erase(it);
  refresh_sharing(span);
  return removed;
}

void RegionLayout::refresh_sharing(const PageSpan& span) {
  std::set<PoolId> touched;
  for (std::uint64_t p = span.first; p < span.last; ++p) {
    if (auto it = page_pools_.find(p); it != page_pools_.end()) {
      touched.insert(it->second.begin(), it->second.end());
    }
  }
  for (PoolId id : touched) {
    AllocatedPool& pool = pools_.at(pool_base_.at(id));
    const PageSpan ps = page_span(pool.range);
    bool shared = false;
    for (std::uint64_t p = ps.first; p < ps.last && !shared; ++p) shared = is_shared(Pfn{p});
    pool.page_shared = shared;
  }
}

void RegionLayout::add_process(ProcessId pid, const std::vector<GpaRange>& regions) {
  if (regions.empty()) throw ConfigError("process " + std::to_string(pid) + " has no regions");
  if (processes_.contains(pid)) throw ConfigError("process " + std::to_string(pid) + " already exists");
  std::vector<PageSpan> spans;
  for (const GpaRange& r : regions) {
    const PageSpan span = page_span(r);
    for (std::uint64_t p = span.first; p < span.last; ++p) {
      const Claim* c = find_claim(claims_, p);
      if (c && c->tag != RegionTag::OsStructure) {
        throw ConfigError("EPROCESS region " + describe(r) + " overlaps " +
                          std::string(to_string(c->tag)));
      }
    }
    if (claims_overlap(process_claims_, span) || pool_pages_overlap(span)) {
      throw ConfigError("EPROCESS region " + describe(r) + " overlaps an existing region");
    }
    for (const GpaRange& other : regions) {
      if (&other != &r && other.overlaps(r)) {
        throw ConfigError("EPROCESS regions of process " + std::to_string(pid) + " overlap");
      }
    }
    spans.push_back(span);
  }
  // Regions of one process may share a page with each other.
  std::sort(spans.begin(), spans.end(),
            [](const PageSpan& a, const PageSpan& b) { return a.first < b.first; });
  std::vector<PageSpan> merged;
  for (const PageSpan& span : spans) {
    if (!merged.empty() && span.first <= merged.back().last) {
      merged.back().last = std::max(merged.back().last, span.last);
    } else {
      merged.push_back(span);
    }
  }
  for (const PageSpan& span : merged) {
    process_claims_.emplace(span.first, Claim{span.last, RegionTag::Process, std::nullopt, pid});
  }
  processes_.emplace(pid, ProcessRecord{pid, regions});
}

ProcessRecord RegionLayout::remove_process(ProcessId pid) {
  auto it = processes_.find(pid);
  if (it == processes_.end()) throw SimulationError("unknown process " + std::to_string(pid));
  for (auto c = process_claims_.begin(); c != process_claims_.end();) {
    c = c->second.pid == pid ? process_claims_.erase(c) : std::next(c);
  }
  ProcessRecord rec = std::move(it->second);
  processes_.erase(it);
  return rec;
}

RegionTag RegionLayout::base_claim(Pfn page) const {
  if (const Claim* c = find_claim(claims_, page.value)) return c->tag;
  return RegionTag::Unclaimed;
}

RegionTag RegionLayout::page_claim(Pfn page) const {
  if (find_claim(process_claims_, page.value)) return RegionTag::Process;
  return base_claim(page);
}

RegionKind RegionLayout::kind_at(Gpa gpa) const {
  const std::uint64_t page = page_of(gpa).value;
  if (const Claim* c = find_claim(process_claims_, page)) {
    // Only the bytes of the process's regions are protected objects; the
    // remainder of the page follows the same page attributes anyway.
    return RegionKind{RegionTag::Process, std::nullopt, std::nullopt, c->pid};
  }
  if (const Claim* c = find_claim(claims_, page)) {
    return RegionKind{c->tag, c->enclave, std::nullopt, std::nullopt};
  }
  if (const AllocatedPool* p = pool_at(gpa)) {
    return RegionKind{p->owner ? RegionTag::EnclavePool : RegionTag::UnenclavedPool, p->owner, p->id,
                      std::nullopt};
  }
  return RegionKind{};
}

const AllocatedPool* RegionLayout::pool_at(Gpa gpa) const {
  auto it = pools_.upper_bound(gpa.value);
  if (it == pools_.begin()) return nullptr;
  --it;
  return it->second.range.contains(gpa) ? &it->second : nullptr;
}

const AllocatedPool* RegionLayout::pool_by_base(Gpa base) const {
  auto it = pools_.find(base.value);
  return it == pools_.end() ? nullptr : &it->second;
}

const AllocatedPool& RegionLayout::pool(PoolId id) const {
  auto it = pool_base_.find(id);
  if (it == pool_base_.end()) throw SimulationError("unknown pool " + std::to_string(id.value));
  return pools_.at(it->second);
}

std::vector<Owner> RegionLayout::page_owners(Pfn page) const {
  std::vector<Owner> owners;
  auto it = page_pools_.find(page.value);
  if (it == page_pools_.end()) return owners;
  for (PoolId id : it->second) {
    const Owner o = pools_.at(pool_base_.at(id)).owner;
    if (std::find(owners.begin(), owners.end(), o) == owners.end()) owners.push_back(o);
  }
  return owners;
}

std::vector<std::uint64_t> RegionLayout::pool_pages() const {
  std::vector<std::uint64_t> pages;
  pages.reserve(page_pools_.size());
  for (const auto& [p, _] : page_pools_) pages.push_back(p);
  std::sort(pages.begin(), pages.end());
  return pages;
}

const EnclaveRecord* RegionLayout::enclave(EnclaveId id) const {
  auto it = enclaves_.find(id);
  return it == enclaves_.end() ? nullptr : &it->second;
}

const EnclaveRecord* RegionLayout::enclave_by_ept(EptId ept) const {
  for (const auto& [_, e] : enclaves_) {
    if (e.ept_id == ept) return &e;
  }
  return nullptr;
}

}  // namespace ranger
