#pragma once

#include <string>
#include <vector>

namespace tgcn::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// Runs one subcommand (generate | train | evaluate | explain) with argv-style
// arguments, without the program name. Returns the process exit code:
// 0 success, 2 usage error, 3 data error, 4 numerical divergence.
int run(const std::vector<std::string>& args);

}  // namespace tgcn::cli
