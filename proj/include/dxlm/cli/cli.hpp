#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dxlm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumeric = 2;

// Entry point behind the `dxlm` executable. `args` excludes the program
// name. Prints the effective configuration before running a subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dxlm::cli
