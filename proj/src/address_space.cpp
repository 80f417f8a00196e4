#include "ranger/address_space.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "ranger/errors.hpp"

namespace ranger {

namespace {

constexpr std::uint64_t kIndexMask = 0x1FF;

}  // namespace

std::string to_hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

GpaParts split_gpa(Gpa gpa) {
  const std::uint64_t v = gpa.value;
  return GpaParts{
      static_cast<std::uint16_t>((v >> 39) & kIndexMask),
      static_cast<std::uint16_t>((v >> 30) & kIndexMask),
      static_cast<std::uint16_t>((v >> 21) & kIndexMask),
      static_cast<std::uint16_t>((v >> 12) & kIndexMask),
      static_cast<std::uint16_t>(v & (kPageSize - 1)),
  };
}

Gpa join_gpa(const GpaParts& p) {
  return Gpa{(std::uint64_t{p.pml4} << 39) | (std::uint64_t{p.pdpt} << 30) |
             (std::uint64_t{p.pd} << 21) | (std::uint64_t{p.pt} << 12) | p.offset};
}

PageSpan page_span(const GpaRange& range) {
  if (range.size == 0) throw std::invalid_argument("empty range");
  if (range.base.value >= kGpaLimit || range.size > kGpaLimit - range.base.value) {
    throw RangeError("range " + to_hex(range.base.value) + "+" + to_hex(range.size) +
                     " leaves the 48-bit guest-physical space");
  }
  return PageSpan{range.base.value >> kPageShift,
                  ((range.end() - 1) >> kPageShift) + 1};
}

std::vector<Pfn> pages_covering(Gpa base, std::uint64_t size) {
  const PageSpan span = page_span(GpaRange{base, size});
  std::vector<Pfn> out;
  out.reserve(span.last - span.first);
  for (std::uint64_t p = span.first; p < span.last; ++p) out.emplace_back(p);
  return out;
}

FrameStore::FrameStore(Pfn fake_pfn) : fake_pfn_(fake_pfn) { map(fake_pfn_); }

bool FrameStore::map(Pfn pfn) {
  if (pfn.value >= kPfnLimit) throw RangeError("pfn " + to_hex(pfn.value) + " out of range");
  auto [it, inserted] = frames_.try_emplace(pfn.value);
  if (inserted) it->second = std::make_unique<Frame>(Frame{});
  return inserted;
}

void FrameStore::map_range(const GpaRange& range) {
  const PageSpan span = page_span(range);
  for (std::uint64_t p = span.first; p < span.last; ++p) map(Pfn{p});
}

const Frame& FrameStore::frame(Pfn pfn) const {
  auto it = frames_.find(pfn.value);
  if (it == frames_.end()) throw SimulationError("fault: frame " + to_hex(pfn.value) + " is not mapped");
  return *it->second;
}

Frame& FrameStore::frame(Pfn pfn) {
  return const_cast<Frame&>(static_cast<const FrameStore&>(*this).frame(pfn));
}

std::vector<std::uint8_t> FrameStore::read_bytes(Pfn pfn, std::uint64_t offset,
                                                 std::uint64_t len) const {
  if (offset > kPageSize || len > kPageSize - offset) {
    throw RangeError("access " + to_hex(offset) + "+" + to_hex(len) + " crosses the frame boundary");
  }
  const Frame& f = frame(pfn);
  return {f.begin() + offset, f.begin() + offset + len};
}

void FrameStore::write_bytes(Pfn pfn, std::uint64_t offset, std::span<const std::uint8_t> bytes) {
  if (offset > kPageSize || bytes.size() > kPageSize - offset) {
    throw RangeError("access " + to_hex(offset) + "+" + to_hex(bytes.size()) +
                     " crosses the frame boundary");
  }
  Frame& f = frame(pfn);
  std::copy(bytes.begin(), bytes.end(), f.begin() + offset);
}

std::vector<std::uint8_t> FrameStore::read_range(const GpaRange& range) const {
  std::vector<std::uint8_t> out;
  out.reserve(range.size);
  std::uint64_t addr = range.base.value;
  while (addr < range.end()) {
    const std::uint64_t off = addr & (kPageSize - 1);
    const std::uint64_t chunk = std::min(kPageSize - off, range.end() - addr);
    const Frame& f = frame(Pfn{addr >> kPageShift});
    out.insert(out.end(), f.begin() + off, f.begin() + off + chunk);
    addr += chunk;
  }
  return out;
}

void FrameStore::write_range(Gpa base, std::span<const std::uint8_t> bytes) {
  std::uint64_t addr = base.value;
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::uint64_t off = addr & (kPageSize - 1);
    const std::uint64_t chunk = std::min<std::uint64_t>(kPageSize - off, bytes.size() - done);
    write_bytes(Pfn{addr >> kPageShift}, off, bytes.subspan(done, chunk));
    addr += chunk;
    done += chunk;
  }
}

void FrameStore::fill_pattern(const GpaRange& range, std::span<const std::uint8_t> pattern) {
  if (pattern.empty()) return;
  std::vector<std::uint8_t> bytes(range.size);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    // Pattern phase follows the absolute address so partial reads stay aligned.
    bytes[i] = pattern[(range.base.value + i) % pattern.size()];
  }
  write_range(range.base, bytes);
}

void FrameStore::zero(Pfn pfn) { frame(pfn).fill(0); }

bool FrameStore::is_zero(Pfn pfn) const {
  const Frame& f = frame(pfn);
  return std::all_of(f.begin(), f.end(), [](std::uint8_t b) { return b == 0; });
}

std::uint64_t FrameStore::digest(const GpaRange& range) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : read_range(range)) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace ranger
