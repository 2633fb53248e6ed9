#pragma once

#include <iosfwd>

namespace plainusr::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kFileFormat = 3,
  kVerifyFailed = 4,
};

// Entry point of the plainusr tool. Reports go to out, diagnostics to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace plainusr::cli
