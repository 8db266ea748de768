#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace latree::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// args excludes the program name. Diagnostics go to `err`, one line each.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace latree::cli
