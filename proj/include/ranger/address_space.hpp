#pragma once

// Guest-physical address arithmetic and the physical frame store.

#include <array>
#include <compare>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ranger {

inline constexpr std::uint64_t kPageShift = 12;
inline constexpr std::uint64_t kPageSize = 1ull << kPageShift;
inline constexpr std::uint64_t kGpaBits = 48;
inline constexpr std::uint64_t kGpaLimit = 1ull << kGpaBits;
inline constexpr std::uint64_t kPfnLimit = kGpaLimit >> kPageShift;

struct Gpa {
  std::uint64_t value = 0;

  constexpr Gpa() = default;
  constexpr explicit Gpa(std::uint64_t v) : value(v) {}
  constexpr auto operator<=>(const Gpa&) const = default;
  constexpr Gpa operator+(std::uint64_t delta) const { return Gpa{value + delta}; }
};

struct Pfn {
  std::uint64_t value = 0;

  constexpr Pfn() = default;
  constexpr explicit Pfn(std::uint64_t v) : value(v) {}
  constexpr auto operator<=>(const Pfn&) const = default;
  constexpr Gpa base() const { return Gpa{value << kPageShift}; }
};

// Host-physical address produced by a successful translation.
struct Hpa {
  std::uint64_t value = 0;
  constexpr auto operator<=>(const Hpa&) const = default;
  constexpr Pfn pfn() const { return Pfn{value >> kPageShift}; }
  constexpr std::uint64_t offset() const { return value & (kPageSize - 1); }
};

// Half-open byte range [base, base + size).
struct GpaRange {
  Gpa base;
  std::uint64_t size = 0;

  constexpr std::uint64_t end() const { return base.value + size; }
  constexpr bool contains(Gpa g) const { return g.value >= base.value && g.value < end(); }
  constexpr bool overlaps(const GpaRange& o) const {
    return base.value < o.end() && o.base.value < end();
  }
  constexpr bool operator==(const GpaRange&) const = default;
};

struct GpaParts {
  std::uint16_t pml4 = 0;
  std::uint16_t pdpt = 0;
  std::uint16_t pd = 0;
  std::uint16_t pt = 0;
  std::uint16_t offset = 0;
  constexpr bool operator==(const GpaParts&) const = default;
};

// Lowercase "0x..." rendering used in diagnostics and trace files.
std::string to_hex(std::uint64_t v);

GpaParts split_gpa(Gpa gpa);
Gpa join_gpa(const GpaParts& parts);

constexpr Pfn page_of(Gpa gpa) { return Pfn{gpa.value >> kPageShift}; }
constexpr std::uint64_t offset_in_page(Gpa gpa) { return gpa.value & (kPageSize - 1); }

// Every page the byte range touches, ascending. Throws RangeError when the
// range leaves the 48-bit space and std::invalid_argument for size == 0.
std::vector<Pfn> pages_covering(Gpa base, std::uint64_t size);

// First and one-past-last page of a non-empty range, without materializing
// the list.
struct PageSpan {
  std::uint64_t first = 0;
  std::uint64_t last = 0;  // exclusive
};
PageSpan page_span(const GpaRange& range);

using Frame = std::array<std::uint8_t, kPageSize>;

// Sparse host memory: only mapped frames exist, all zero on creation.
class FrameStore {
 public:
  explicit FrameStore(Pfn fake_pfn = default_fake_pfn());

  FrameStore(const FrameStore&) = delete;
  FrameStore& operator=(const FrameStore&) = delete;
  FrameStore(FrameStore&&) = default;
  FrameStore& operator=(FrameStore&&) = default;

  static constexpr Pfn default_fake_pfn() { return Pfn{kPfnLimit - 1}; }

  Pfn fake_pfn() const { return fake_pfn_; }

  // Idempotent; returns true when the frame was newly created.
  bool map(Pfn pfn);
  void map_range(const GpaRange& range);
  bool is_mapped(Pfn pfn) const { return frames_.contains(pfn.value); }
  std::size_t mapped_count() const { return frames_.size(); }

  std::vector<std::uint8_t> read_bytes(Pfn pfn, std::uint64_t offset, std::uint64_t len) const;
  void write_bytes(Pfn pfn, std::uint64_t offset, std::span<const std::uint8_t> bytes);

  // Byte-range helpers over identity-mapped guest memory; may span pages.
  std::vector<std::uint8_t> read_range(const GpaRange& range) const;
  void write_range(Gpa base, std::span<const std::uint8_t> bytes);
  void fill_pattern(const GpaRange& range, std::span<const std::uint8_t> pattern);

  void zero(Pfn pfn);
  bool is_zero(Pfn pfn) const;

  // FNV-1a over the bytes of the range.
  std::uint64_t digest(const GpaRange& range) const;

 private:
  const Frame& frame(Pfn pfn) const;
  Frame& frame(Pfn pfn);

  Pfn fake_pfn_;
  std::unordered_map<std::uint64_t, std::unique_ptr<Frame>> frames_;
};

}  // namespace ranger
