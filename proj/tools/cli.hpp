// Command-line front end: estimate, simulate, report.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stagdid::cli {

enum ExitCode { kOk = 0, kInternal = 1, kUserError = 2 };

/// Runs one command; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stagdid::cli
