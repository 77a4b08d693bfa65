#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kalign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitDivergence = 3;

// Runs the `kalign` command line. args[0] is the program name. Errors are reported on `err`
// as one JSON line: {"error": {"kind": ..., "message": ...}}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kalign
