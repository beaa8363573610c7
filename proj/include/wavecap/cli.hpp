#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wavecap::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kRuntime = 5,
};

/// Runs the command line (args excludes the program name). Results go to
/// `out`, progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace wavecap::cli
