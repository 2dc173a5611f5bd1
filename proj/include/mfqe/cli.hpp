#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mfqe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// `args` excludes the program name; args[0] is the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace mfqe::cli
