#pragma once

#include <string>
#include <vector>

namespace thlm::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kConfigError = 2;

// Entry point shared by the executable and the tests. args[0] is the program name.
int cli_run(const std::vector<std::string>& args);

}  // namespace thlm::cli
