#pragma once

// Command-line front end. `run` is the whole program minus process setup so
// tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <vector>

namespace archpilot::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,  // flow-check found a failing invariant
  kUsage = 2,
  kValidation = 3,
  kInfeasible = 4,
};

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Worker count for internal parallelism: hardware concurrency capped by
// ARCHPILOT_THREADS when that is set to a positive integer.
unsigned thread_budget();

}  // namespace archpilot::cli
