#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ladeep::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Runs one subcommand. args[0] is the program name. Diagnostics go to
/// `err`, reports and usage text to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ladeep::cli
