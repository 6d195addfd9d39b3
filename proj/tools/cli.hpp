#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mdsam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point behind the `mdsam` binary: subcommands decode, sweep and analyze.
// args excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdsam::cli
