#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace wbfuse::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kSolverError = 3,
    kIoError = 4,
};

/// Runs one command line (args excludes the program name). Normal output
/// goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace wbfuse::cli
