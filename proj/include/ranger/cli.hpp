#pragma once

#include <iosfwd>

namespace ranger {

// Entry point of the `ranger` tool. Exit codes: 0 clean, 1 malformed input
// or I/O failure, 2 property violation detected by `run` or `batch`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ranger
