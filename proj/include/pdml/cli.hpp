#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pdml::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kRuntime = 2,
};

// Dispatches `args` (without the program name) to one of the subcommands
// gen-data, train, eval, extend, hist.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pdml::cli
