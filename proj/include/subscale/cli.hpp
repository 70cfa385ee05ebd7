#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace subscale {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;     // I/O, schema or usage error
inline constexpr int kExitAnalytic = 2;  // fit did not converge, no interior minimum, degenerate geometry, ...

// Runs the command line `args` (program name excluded). Results go to `out`,
// diagnostics to `err` as a single line prefixed with "subscale: ".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace subscale
