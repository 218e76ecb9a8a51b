#pragma once

#include <string>
#include <vector>

namespace hazesynth::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv);
// `args` excludes the program name.
int run(const std::vector<std::string>& args);

// Shortest round-trip decimal with at least one fractional digit: 0.6 → "0.6", 1 → "1.0".
std::string format_alpha(double alpha);

} // namespace hazesynth::cli
