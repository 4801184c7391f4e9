#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace warptile {

enum ExitCode { kExitOk = 0, kExitMismatch = 1, kExitUsage = 2 };

/// Runs the command-line tool. `args` excludes the program name.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace warptile
