#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace engage::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitLeakage = 3;
inline constexpr int kExitUsage = 64;

/// Built-in values of every configuration key.
nlohmann::json default_config();

/// Defaults, then `file` (a JSON object) on top. Unknown keys and values of
/// the wrong type are rejected.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& file);

/// Runs one command line (argv[0] is the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace engage::cli
