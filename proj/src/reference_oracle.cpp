#include "ranger/reference_oracle.hpp"

#include <algorithm>

#include "ranger/errors.hpp"

namespace ranger {

namespace {

constexpr Perms kAll{true, true, true};
constexpr Perms kData{true, true, false};
constexpr Perms kBlocked{false, false, false};

enum class Base : std::uint8_t { Unclaimed, Kernel, OsStruct, Other, Image };

struct PageClass {
  Base base = Base::Unclaimed;
  std::uint32_t image_ept = 0;
  bool process = false;
  bool pooled = false;
  bool multi_owner = false;
  std::uint32_t owner = 0;
};

bool in_any(const std::vector<GpaRange>& rs, Gpa g) {
  return std::any_of(rs.begin(), rs.end(), [&](const GpaRange& r) { return r.contains(g); });
}

bool page_in_any(const std::vector<GpaRange>& rs, std::uint64_t page) {
  return std::any_of(rs.begin(), rs.end(), [&](const GpaRange& r) {
    const PageSpan s = page_span(r);
    return page >= s.first && page < s.last;
  });
}

}  // namespace

const Perms* FlatPolicy::lookup(EptId ept, Pfn page) const {
  auto e = std::lower_bound(epts.begin(), epts.end(), ept);
  if (e == epts.end() || *e != ept) return nullptr;
  auto p = std::lower_bound(pages.begin(), pages.end(), page.value);
  if (p == pages.end() || *p != page.value) return nullptr;
  return &table[static_cast<std::size_t>(e - epts.begin()) * pages.size() +
                static_cast<std::size_t>(p - pages.begin())];
}

std::string Mismatch::describe() const {
  const std::string where = "EPT " + std::to_string(ept.value);
  switch (kind) {
    case Kind::MissingEpt: return where + " is missing";
    case Kind::UnexpectedEpt: return where + " should not exist";
    case Kind::Frame:
      return where + " page " + to_hex(page.value) + " maps frame " + to_hex(actual.pfn.value);
    case Kind::Attributes:
      return where + " page " + to_hex(page.value) + " has " + to_string(actual.perms) +
             ", expected " + to_string(expected);
  }
  return where;
}

ReferenceOracle::ReferenceOracle(const OsLayout& os, EptId default_ept)
    : os_(os), default_ept_(default_ept) {
  track(os_.kernel_code);
  for (const GpaRange& r : os_.structures) track(r);
  for (const GpaRange& r : os_.other_drivers) track(r);
}

void ReferenceOracle::track(const GpaRange& r) {
  const PageSpan s = page_span(r);
  std::vector<std::uint64_t> add;
  for (std::uint64_t p = s.first; p < s.last; ++p) add.push_back(p);
  std::vector<std::uint64_t> merged;
  merged.reserve(tracked_.size() + add.size());
  std::set_union(tracked_.begin(), tracked_.end(), add.begin(), add.end(), std::back_inserter(merged));
  tracked_.swap(merged);
}

void ReferenceOracle::driver_loaded(EptId ept, const GpaRange& image) {
  images_.push_back(Image{ept, image});
  track(image);
}

void ReferenceOracle::driver_unloaded(EptId ept) {
  std::erase_if(images_, [&](const Image& i) { return i.ept == ept; });
  std::erase_if(pools_, [&](const Pool& p) { return p.owner == ept.value; });
}

std::uint32_t ReferenceOracle::code_owner(Gpa src, bool& is_code) const {
  is_code = true;
  if (os_.kernel_code.contains(src) || in_any(os_.other_drivers, src)) return kUnenclaved;
  for (const Image& i : images_) {
    if (page_in_any({i.range}, page_of(src).value)) return i.ept.value;
  }
  for (const Pool& p : pools_) {
    if (p.range.contains(src) && p.owner != kUnenclaved) return p.owner;
  }
  is_code = false;
  return kUnenclaved;
}

void ReferenceOracle::pool_allocated(Gpa caller, const GpaRange& pool) {
  bool is_code = false;
  const std::uint32_t owner = code_owner(caller, is_code);
  pools_.push_back(Pool{pool, owner});
  track(pool);
}

void ReferenceOracle::pool_freed(Gpa base) {
  auto it = std::find_if(pools_.begin(), pools_.end(), [&](const Pool& p) { return p.range.base == base; });
  if (it == pools_.end()) throw SimulationError("oracle: no pool at " + to_hex(base.value));
  pools_.erase(it);
}

void ReferenceOracle::process_created(ProcessId pid, const std::vector<GpaRange>& regions) {
  processes_.push_back(Process{pid, regions});
  for (const GpaRange& r : regions) track(r);
}

void ReferenceOracle::process_exited(ProcessId pid) {
  std::erase_if(processes_, [&](const Process& p) { return p.pid == pid; });
}

std::vector<std::uint32_t> ReferenceOracle::owners_on_page(std::uint64_t page) const {
  std::vector<std::uint32_t> owners;
  for (const Pool& p : pools_) {
    const PageSpan s = page_span(p.range);
    if (page >= s.first && page < s.last &&
        std::find(owners.begin(), owners.end(), p.owner) == owners.end()) {
      owners.push_back(p.owner);
    }
  }
  return owners;
}

FlatPolicy ReferenceOracle::rebuild() const {
  FlatPolicy flat;
  flat.pages = tracked_;
  const std::size_t n = tracked_.size();

  std::vector<PageClass> cls(n);
  auto mark = [&](const GpaRange& r, auto&& fn) {
    const PageSpan s = page_span(r);
    auto it = std::lower_bound(tracked_.begin(), tracked_.end(), s.first);
    for (; it != tracked_.end() && *it < s.last; ++it) fn(cls[static_cast<std::size_t>(it - tracked_.begin())]);
  };
  mark(os_.kernel_code, [](PageClass& c) { c.base = Base::Kernel; });
  for (const GpaRange& r : os_.structures) mark(r, [](PageClass& c) { c.base = Base::OsStruct; });
  for (const GpaRange& r : os_.other_drivers) mark(r, [](PageClass& c) { c.base = Base::Other; });
  for (const Image& i : images_) {
    mark(i.range, [&](PageClass& c) {
      c.base = Base::Image;
      c.image_ept = i.ept.value;
    });
  }
  for (const Process& p : processes_) {
    for (const GpaRange& r : p.regions) mark(r, [](PageClass& c) { c.process = true; });
  }
  for (const Pool& p : pools_) {
    mark(p.range, [&](PageClass& c) {
      if (!c.pooled) {
        c.pooled = true;
        c.owner = p.owner;
      } else if (c.owner != p.owner) {
        c.multi_owner = true;
      }
    });
  }

  flat.epts.push_back(default_ept_);
  for (const Image& i : images_) flat.epts.push_back(i.ept);
  std::sort(flat.epts.begin(), flat.epts.end());

  flat.table.resize(flat.epts.size() * n);
  for (std::size_t e = 0; e < flat.epts.size(); ++e) {
    const std::uint32_t ept = flat.epts[e].value;
    const bool is_default = flat.epts[e] == default_ept_;
    for (std::size_t i = 0; i < n; ++i) {
      const PageClass& c = cls[i];
      Perms p = kData;  // fresh-EPT default
      if (c.pooled) {
        if (c.multi_owner) {
          p = kBlocked;
        } else if (c.owner == kUnenclaved) {
          p = kData;
        } else {
          p = c.owner == ept ? kAll : kBlocked;
        }
      } else if (c.process) {
        p = is_default ? kAll : kBlocked;
      } else {
        switch (c.base) {
          case Base::Kernel: p = kAll; break;
          case Base::OsStruct: p = is_default ? kAll : kBlocked; break;
          case Base::Other: p = is_default ? kAll : kData; break;
          case Base::Image: p = c.image_ept == ept ? kAll : kBlocked; break;
          case Base::Unclaimed: p = kData; break;
        }
      }
      flat.table[e * n + i] = p;
    }
  }
  return flat;
}

bool ReferenceOracle::legal(Gpa src, Gpa dst, Access access) const {
  bool is_code = false;
  const std::uint32_t actor = code_owner(src, is_code);
  if (!is_code) return false;
  const bool actor_enclaved = actor != kUnenclaved;
  const std::uint64_t page = page_of(dst).value;

  // Destination, classified from the facts at byte granularity.
  for (const Image& i : images_) {
    if (page_in_any({i.range}, page)) return access == Access::Execute || actor == i.ept.value;
  }
  for (const Pool& p : pools_) {
    if (!p.range.contains(dst)) continue;
    if (access == Access::Execute) return p.owner != kUnenclaved && actor == p.owner;
    if (p.owner != kUnenclaved) return actor == p.owner;
    return !actor_enclaved || owners_on_page(page).size() == 1;
  }
  if (os_.kernel_code.contains(dst) || in_any(os_.other_drivers, dst)) return true;
  if (access == Access::Execute) return false;
  for (const Process& p : processes_) {
    if (page_in_any(p.regions, page)) return !actor_enclaved;
  }
  if (in_any(os_.structures, dst)) return !actor_enclaved;

  // Slack bytes of a pool page follow whoever holds the page.
  const std::vector<std::uint32_t> owners = owners_on_page(page);
  if (owners.empty()) return true;
  if (owners.size() > 1) return false;
  return owners.front() == kUnenclaved || owners.front() == actor;
}

std::vector<Mismatch> check_against(const FlatPolicy& flat, std::span<const Ept* const> epts) {
  std::vector<Mismatch> out;
  std::vector<bool> seen(flat.epts.size(), false);
  for (const Ept* ept : epts) {
    auto it = std::lower_bound(flat.epts.begin(), flat.epts.end(), ept->id());
    if (it == flat.epts.end() || *it != ept->id()) {
      out.push_back(Mismatch{Mismatch::Kind::UnexpectedEpt, ept->id(), Pfn{}, kBlocked, EptEntry{}});
      continue;
    }
    const std::size_t row = static_cast<std::size_t>(it - flat.epts.begin());
    seen[row] = true;
    const Perms* expected = &flat.table[row * flat.pages.size()];
    for (std::size_t i = 0; i < flat.pages.size(); ++i) {
      const Pfn page{flat.pages[i]};
      const EptEntry actual = ept->entry(page);
      if (actual.pfn != page) {
        out.push_back(Mismatch{Mismatch::Kind::Frame, ept->id(), page, expected[i], actual});
      } else if (actual.perms != expected[i]) {
        out.push_back(Mismatch{Mismatch::Kind::Attributes, ept->id(), page, expected[i], actual});
      }
    }
  }
  for (std::size_t r = 0; r < seen.size(); ++r) {
    if (!seen[r]) out.push_back(Mismatch{Mismatch::Kind::MissingEpt, flat.epts[r], Pfn{}, kBlocked, EptEntry{}});
  }
  return out;
}

}  // namespace ranger
