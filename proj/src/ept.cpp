#include "ranger/ept.hpp"

#include "ranger/errors.hpp"

namespace ranger {

std::string_view to_string(Access a) {
  switch (a) {
    case Access::Read: return "read";
    case Access::Write: return "write";
    case Access::Execute: return "execute";
  }
  return "?";
}

std::string to_string(Perms p) {
  return {p.read ? 'r' : '-', p.write ? 'w' : '-', p.execute ? 'x' : '-'};
}

struct Ept::LeafTable {
  std::array<EptEntry, kEntries> entries;
};
struct Ept::PdTable {
  std::array<std::unique_ptr<LeafTable>, kEntries> next;
};
struct Ept::PdptTable {
  std::array<std::unique_ptr<PdTable>, kEntries> next;
};
struct Ept::Pml4Table {
  std::array<std::unique_ptr<PdptTable>, kEntries> next;
};

Ept::Ept(EptId id, GpaRange identity_range, Perms default_perms)
    : id_(id),
      identity_(identity_range),
      default_perms_(default_perms),
      root_(std::make_unique<Pml4Table>()) {}

Ept::Ept(Ept&&) noexcept = default;
Ept& Ept::operator=(Ept&&) noexcept = default;
Ept::~Ept() = default;

Ept create_ept(EptId id, GpaRange identity_range) { return Ept(id, identity_range, kRw); }

bool Ept::in_identity(Pfn page) const {
  return page.value < kPfnLimit && identity_.contains(page.base());
}

EptEntry Ept::lazy_entry(Pfn page) const {
  return EptEntry{page, in_identity(page) ? default_perms_ : kNone};
}

const EptEntry* Ept::find(Pfn page) const {
  const GpaParts ix = split_gpa(page.base());
  const PdptTable* pdpt = root_->next[ix.pml4].get();
  if (!pdpt) return nullptr;
  const PdTable* pd = pdpt->next[ix.pdpt].get();
  if (!pd) return nullptr;
  const LeafTable* pt = pd->next[ix.pd].get();
  if (!pt) return nullptr;
  return &pt->entries[ix.pt];
}

EptEntry& Ept::materialize(Pfn page) {
  if (!in_identity(page)) {
    throw RangeError("page " + to_hex(page.value) + " is outside the EPT's range");
  }
  const GpaParts ix = split_gpa(page.base());
  auto& pdpt = root_->next[ix.pml4];
  if (!pdpt) pdpt = std::make_unique<PdptTable>();
  auto& pd = pdpt->next[ix.pdpt];
  if (!pd) pd = std::make_unique<PdTable>();
  auto& pt = pd->next[ix.pd];
  if (!pt) {
    pt = std::make_unique<LeafTable>();
    const std::uint64_t first = page.value & ~std::uint64_t{kEntries - 1};
    for (std::size_t i = 0; i < kEntries; ++i) pt->entries[i] = lazy_entry(Pfn{first + i});
  }
  return pt->entries[ix.pt];
}

EptEntry Ept::entry(Pfn page) const {
  if (const EptEntry* e = find(page)) return *e;
  return lazy_entry(page);
}

void Ept::set_entry(Pfn page, const EptEntry& e) { materialize(page) = e; }

void Ept::set_page_perms(Pfn page, Perms perms) { materialize(page).perms = perms; }

void Ept::set_region_perms(Gpa base, std::uint64_t size, Perms perms) {
  const PageSpan span = page_span(GpaRange{base, size});
  for (std::uint64_t p = span.first; p < span.last; ++p) set_page_perms(Pfn{p}, perms);
}

EptEntry Ept::set_page_pfn(Pfn page, Pfn target) {
  EptEntry& e = materialize(page);
  const EptEntry prior = e;
  e.pfn = target;
  return prior;
}

Translation Ept::translate(Gpa gpa, Access access) const {
  const EptEntry e = entry(page_of(gpa));
  if (!e.perms.allows(access)) return EptViolation{id_, gpa, access, e};
  return Hpa{(e.pfn.value << kPageShift) | offset_in_page(gpa)};
}

void Ept::for_each_entry(const std::function<void(Pfn, const EptEntry&)>& fn) const {
  for (std::size_t a = 0; a < kEntries; ++a) {
    const PdptTable* pdpt = root_->next[a].get();
    if (!pdpt) continue;
    for (std::size_t b = 0; b < kEntries; ++b) {
      const PdTable* pd = pdpt->next[b].get();
      if (!pd) continue;
      for (std::size_t c = 0; c < kEntries; ++c) {
        const LeafTable* pt = pd->next[c].get();
        if (!pt) continue;
        const std::uint64_t first = (((a << 9) | b) << 18) | (c << 9);
        for (std::size_t d = 0; d < kEntries; ++d) fn(Pfn{first + d}, pt->entries[d]);
      }
    }
  }
}

std::size_t Ept::materialized_tables() const {
  std::size_t n = 1;
  for (const auto& pdpt : root_->next) {
    if (!pdpt) continue;
    ++n;
    for (const auto& pd : pdpt->next) {
      if (!pd) continue;
      ++n;
      for (const auto& pt : pd->next) n += pt ? 1 : 0;
    }
  }
  return n;
}

}  // namespace ranger
