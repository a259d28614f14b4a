// Command-line driver: estimate, baseline, synth, sweep, score and report.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace shadowem::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericalFailure = 3,
};

int run(int argc, char** argv);

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace shadowem::cli
