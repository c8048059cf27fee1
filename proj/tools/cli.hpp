#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mlma::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // bad input, config or flags
inline constexpr int kExitRuntime = 2;     // failures while running

// Runs one invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlma::cli
