#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sfm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Runs the sfm command line. args excludes the program name. Returns the
/// process exit code; never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sfm::cli
