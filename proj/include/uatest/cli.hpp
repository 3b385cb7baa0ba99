#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace uatest {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitBudget = 3 };

/// Runs one command line; `args` excludes the program name. Reports go to
/// `out` unless --out names a file; diagnostics go to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

} // namespace uatest
