#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nnkg {

// Runs one command-line invocation in-process (args exclude the program
// name). Returns the process exit code: 0 success, 1 usage or configuration
// error, 2 data error, 3 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace nnkg
