#pragma once

// Command-line front end. Every command is a library function so tests can
// drive it without spawning processes.

#include <iosfwd>
#include <string>
#include <vector>

namespace slopestrike::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kData = 3,
    kNumerical = 4,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

} // namespace slopestrike::cli
