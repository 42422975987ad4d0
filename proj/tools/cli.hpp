#ifndef INTERFERE_TOOLS_CLI_HPP
#define INTERFERE_TOOLS_CLI_HPP

#include <string>
#include <vector>

namespace interfere::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes shared by every subcommand.
enum ExitCode : int { kSuccess = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

/// Runs the command line; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace interfere::cli

#endif  // INTERFERE_TOOLS_CLI_HPP
