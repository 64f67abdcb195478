#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xlc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // domain failure (violations, bad data, failed run)
inline constexpr int kExitUsage = 2;    // bad flags, unreadable or unwritable files

inline constexpr const char* kConfigSchema = "xlc-config/1";

// Entry point for the `xlc` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xlc
