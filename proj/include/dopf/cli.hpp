#pragma once

#include <iosfwd>

namespace dopf {

/// Exit codes of the command-line driver.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,  ///< bad flags, unreadable input, schema mismatch
  kExitNoConsensus = 3,
  kExitSolveFailure = 4,  ///< subproblem failure or time budget exceeded
};

/// Entry point of the `dopf` tool with injectable streams.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dopf
