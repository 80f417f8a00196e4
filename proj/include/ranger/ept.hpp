#pragma once

// Second-level translation: a lazily materialized 4-level radix of EPT
// entries. Permissions live in the leaf entries only.

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>

#include "ranger/address_space.hpp"

namespace ranger {

enum class Access : std::uint8_t { Read, Write, Execute };

std::string_view to_string(Access a);

struct Perms {
  bool read = false;
  bool write = false;
  bool execute = false;

  constexpr bool allows(Access a) const {
    switch (a) {
      case Access::Read: return read;
      case Access::Write: return write;
      case Access::Execute: return execute;
    }
    return false;
  }
  constexpr Perms with(Access a) const {
    Perms p = *this;
    switch (a) {
      case Access::Read: p.read = true; break;
      case Access::Write: p.write = true; break;
      case Access::Execute: p.execute = true; break;
    }
    return p;
  }
  constexpr bool operator==(const Perms&) const = default;
};

inline constexpr Perms kRwx{true, true, true};
inline constexpr Perms kRw{true, true, false};
inline constexpr Perms kNone{false, false, false};

// "rwx" / "rw-" / "---" style rendering.
std::string to_string(Perms p);

struct EptId {
  std::uint32_t value = 0;
  constexpr auto operator<=>(const EptId&) const = default;
};

// A leaf entry. Non-present is encoded as all three permission bits clear.
struct EptEntry {
  Pfn pfn;
  Perms perms;
  constexpr bool operator==(const EptEntry&) const = default;
};

struct EptViolation {
  EptId ept;
  Gpa gpa;
  Access access = Access::Read;
  EptEntry entry_snapshot;
};

using Translation = std::variant<Hpa, EptViolation>;

class Ept {
 public:
  static constexpr std::size_t kEntries = 512;

  // Pages inside identity_range map to themselves with default_perms; pages
  // outside it are non-present and cannot be remapped.
  explicit Ept(EptId id, GpaRange identity_range = GpaRange{Gpa{0}, kGpaLimit},
               Perms default_perms = kRw);

  Ept(const Ept&) = delete;
  Ept& operator=(const Ept&) = delete;
  Ept(Ept&&) noexcept;
  Ept& operator=(Ept&&) noexcept;
  ~Ept();

  EptId id() const { return id_; }
  Perms default_perms() const { return default_perms_; }
  const GpaRange& identity_range() const { return identity_; }

  // Entry governing the page; untouched pages report the lazy default.
  EptEntry entry(Pfn page) const;

  // Replaces the whole leaf entry; used to restore a saved snapshot.
  void set_entry(Pfn page, const EptEntry& e);

  void set_page_perms(Pfn page, Perms perms);
  void set_region_perms(Gpa base, std::uint64_t size, Perms perms);
  void set_region_perms(const GpaRange& range, Perms perms) {
    set_region_perms(range.base, range.size, perms);
  }

  // Points the page at another frame and returns the prior entry.
  EptEntry set_page_pfn(Pfn page, Pfn target);

  Translation translate(Gpa gpa, Access access) const;

  // Visits every materialized leaf entry in ascending page order.
  void for_each_entry(const std::function<void(Pfn, const EptEntry&)>& fn) const;

  std::size_t materialized_tables() const;

 private:
  struct LeafTable;
  struct PdTable;
  struct PdptTable;
  struct Pml4Table;

  bool in_identity(Pfn page) const;
  EptEntry lazy_entry(Pfn page) const;
  EptEntry& materialize(Pfn page);
  const EptEntry* find(Pfn page) const;

  EptId id_;
  GpaRange identity_;
  Perms default_perms_;
  std::unique_ptr<Pml4Table> root_;
};

// Creates an EPT with the initial attributes of a freshly allocated
// structure: identity mapping, readable and writable, not executable.
Ept create_ept(EptId id, GpaRange identity_range = GpaRange{Gpa{0}, kGpaLimit});

}  // namespace ranger
