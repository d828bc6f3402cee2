#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dtld {

/// Environment variable naming the config file used when --config is absent.
inline constexpr const char* kConfigEnvVar = "DTLD_CONFIG";

/// Runs one CLI invocation; args excludes the program name. Returns the exit
/// code: 0 success, 1 validation error, 2 runtime or numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dtld
