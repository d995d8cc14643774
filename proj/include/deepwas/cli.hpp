#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace deepwas {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitIo = 4 };

/// Entry point of the `deepwas` tool; `args` excludes the program name.
/// Subcommands: simulate, precompute, train, eval, bench.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deepwas
