#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hires::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Runs one command line (args excludes the program name). Normal output goes
/// to out; the resolved config and diagnostics go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hires::cli
