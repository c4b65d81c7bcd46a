#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace insec::cli {

/// Entry point behind the `insec` binary. `args` excludes the program name.
/// Errors are reported as one JSON object on `err`; the return value is the
/// process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace insec::cli
