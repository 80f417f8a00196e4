#pragma once

// Trace events consumed by the kernel simulator, the canonical fixture
// layout, and the JSON-lines trace format.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ranger/address_space.hpp"
#include "ranger/ept.hpp"
#include "ranger/policy.hpp"

namespace ranger {

namespace fixture {

inline constexpr GpaRange kKernelCode{Gpa{0x1000'0000}, 0x10'0000};
inline constexpr GpaRange kOsStructures{Gpa{0x2000'0000}, 0x1'0000};
// EPROCESS objects live here, one page-sized slot per process id.
inline constexpr GpaRange kEprocessArea{Gpa{0x2100'0000}, 0x40'0000};
inline constexpr GpaRange kOtherDrivers[] = {
    {Gpa{0x2800'0000}, 0x1'0000},
    {Gpa{0x2801'0000}, 0x1'0000},
};
inline constexpr GpaRange kDriverA{Gpa{0x3000'0000}, 0x2000};
inline constexpr GpaRange kDriverB{Gpa{0x4000'0000}, 0x2000};
inline constexpr GpaRange kPoolArena{Gpa{0x5000'0000}, 0x100'0000};

inline constexpr const char* kKernelActor = "os_kernel";
inline constexpr std::uint64_t kSchedulerStub = 0x1000;  // offset into kernel code
inline constexpr std::uint64_t kKernelRoutine = 0x2000;
inline constexpr std::uint64_t kEntryOffset = 0x10;       // driver entry point

// EPROCESS body and its token, inside the process slot.
inline constexpr std::uint64_t kEprocessBody = 0x300;
inline constexpr std::uint64_t kTokenOffset = 0x358;
inline constexpr std::uint64_t kTokenSize = 8;

OsLayout os_layout();
std::string other_driver_name(std::size_t index);
// Body and token ranges of the process slot for `pid`.
std::vector<GpaRange> process_regions(std::uint32_t pid);

}  // namespace fixture

enum class Align : std::uint8_t { PageAligned, Natural };

std::string_view to_string(Align a);

enum class RefKind : std::uint8_t {
  OwnPool,
  PoolOf,
  ImageOf,
  Eprocess,
  OsKernelCode,
  OsStructures,
  OtherDriver,
};

std::string_view to_string(RefKind k);

// Symbolic destination; resolved against the simulator's state when the
// access executes. `index` is a pool index, region index or driver slot
// depending on the kind.
struct DstRef {
  RefKind kind = RefKind::OwnPool;
  std::string driver;
  std::uint32_t index = 0;
  std::uint32_t pid = 0;
  std::uint64_t offset = 0;

  bool operator==(const DstRef&) const = default;
};

struct LoadDriver {
  std::string name;
  Gpa image_base;
  std::uint64_t image_size = 0;
  bool operator==(const LoadDriver&) const = default;
};
struct UnloadDriver {
  std::string name;
  bool operator==(const UnloadDriver&) const = default;
};
struct CreateProcess {
  std::uint32_t pid = 0;
  std::vector<GpaRange> regions;
  bool operator==(const CreateProcess&) const = default;
};
struct ExitProcess {
  std::uint32_t pid = 0;
  bool operator==(const ExitProcess&) const = default;
};
struct Alloc {
  std::string actor;
  std::uint64_t size = 0;
  Align align = Align::PageAligned;
  bool operator==(const Alloc&) const = default;
};
// Frees the actor's `index`-th live pool (allocation order).
struct Free {
  std::string actor;
  std::uint32_t index = 0;
  bool operator==(const Free&) const = default;
};
struct Schedule {
  std::string actor;
  bool operator==(const Schedule&) const = default;
};
struct AccessEvent {
  std::string actor;
  DstRef dst;
  Access access = Access::Read;
  std::uint32_t len = 4;
  std::optional<std::vector<std::uint8_t>> payload;
  // Generator label: whether the access was built to be legal.
  std::optional<bool> expect_legal;
  bool operator==(const AccessEvent&) const = default;
};

using TraceEvent =
    std::variant<LoadDriver, UnloadDriver, CreateProcess, ExitProcess, Alloc, Free, Schedule, AccessEvent>;
using Trace = std::vector<TraceEvent>;

// One JSON object per line. Parse errors carry the 1-based line number;
// blank lines are skipped.
Trace parse_trace(std::istream& in);
Trace load_trace(const std::string& path);
std::string serialize_event(const TraceEvent& ev);
void write_trace(std::ostream& out, const Trace& trace);
void save_trace(const std::string& path, const Trace& trace);

}  // namespace ranger
