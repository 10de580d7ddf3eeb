#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace blindkernel {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitDivergence = 2;

/// Entry point of the command-line tool. `args` excludes the program name.
/// Subcommands: estimate, make-dataset, evaluate, derive-scale, write-corpus.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blindkernel
