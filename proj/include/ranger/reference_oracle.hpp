#pragma once

// Brute-force model of the isolation policy. It keeps its own list of
// facts (regions, images, pools, processes) and, on demand, recomputes the
// attribute every EPT must hold for every page that was ever claimed.
// It shares no code with the policy engine it checks.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ranger/address_space.hpp"
#include "ranger/ept.hpp"
#include "ranger/policy.hpp"

namespace ranger {

struct FlatPolicy {
  std::vector<EptId> epts;            // ascending
  std::vector<std::uint64_t> pages;   // ascending tracked pages
  std::vector<Perms> table;           // epts.size() x pages.size(), row per EPT

  const Perms* lookup(EptId ept, Pfn page) const;
};

struct Mismatch {
  enum class Kind : std::uint8_t { Attributes, Frame, MissingEpt, UnexpectedEpt };
  Kind kind = Kind::Attributes;
  EptId ept;
  Pfn page;
  Perms expected;
  EptEntry actual;

  std::string describe() const;
};

class ReferenceOracle {
 public:
  ReferenceOracle(const OsLayout& os, EptId default_ept);

  void driver_loaded(EptId ept, const GpaRange& image);
  void driver_unloaded(EptId ept);
  void pool_allocated(Gpa caller, const GpaRange& pool);
  void pool_freed(Gpa base);
  void process_created(ProcessId pid, const std::vector<GpaRange>& regions);
  void process_exited(ProcessId pid);

  FlatPolicy rebuild() const;

  // Whether the access is one the policy must let through with true data.
  bool legal(Gpa src, Gpa dst, Access access) const;

  std::size_t tracked_pages() const { return tracked_.size(); }

 private:
  static constexpr std::uint32_t kUnenclaved = 0xFFFFFFFFu;

  struct Image {
    EptId ept;
    GpaRange range;
  };
  struct Pool {
    GpaRange range;
    std::uint32_t owner;  // EPT id of the owning enclave or kUnenclaved
  };
  struct Process {
    ProcessId pid;
    std::vector<GpaRange> regions;
  };

  void track(const GpaRange& r);
  std::uint32_t code_owner(Gpa src, bool& is_code) const;
  // Distinct pool owners with bytes on the page.
  std::vector<std::uint32_t> owners_on_page(std::uint64_t page) const;

  OsLayout os_;
  EptId default_ept_;
  std::vector<Image> images_;
  std::vector<Pool> pools_;
  std::vector<Process> processes_;
  std::vector<std::uint64_t> tracked_;
};

// Empty iff every EPT exists as expected and agrees with the flat table on
// every tracked page. Untracked pages are not compared.
std::vector<Mismatch> check_against(const FlatPolicy& flat, std::span<const Ept* const> epts);

}  // namespace ranger
