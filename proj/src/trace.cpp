#include "ranger/trace.hpp"

#include "ranger/errors.hpp"

namespace ranger {

namespace fixture {

OsLayout os_layout() {
  OsLayout os;
  os.kernel_code = kKernelCode;
  os.structures = {kOsStructures};
  os.other_drivers.assign(std::begin(kOtherDrivers), std::end(kOtherDrivers));
  return os;
}

std::string other_driver_name(std::size_t index) { return "other" + std::to_string(index); }

std::vector<GpaRange> process_regions(std::uint32_t pid) {
  const std::uint64_t slots = kEprocessArea.size / kPageSize;
  if (pid >= slots) throw SimulationError("pid " + std::to_string(pid) + " has no EPROCESS slot");
  const Gpa slot = kEprocessArea.base + pid * kPageSize;
  return {GpaRange{slot, kEprocessBody}, GpaRange{slot + kTokenOffset, kTokenSize}};
}

}  // namespace fixture

std::string_view to_string(Align a) { return a == Align::PageAligned ? "page" : "natural"; }

std::string_view to_string(RefKind k) {
  switch (k) {
    case RefKind::OwnPool: return "own_pool";
    case RefKind::PoolOf: return "pool_of";
    case RefKind::ImageOf: return "image_of";
    case RefKind::Eprocess: return "eprocess";
    case RefKind::OsKernelCode: return "os_kernel_code";
    case RefKind::OsStructures: return "os_structures";
    case RefKind::OtherDriver: return "other_driver";
  }
  return "?";
}

}  // namespace ranger
