#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qadpt {

/// Runs one `qadpt` invocation; `args` excludes the program name. Returns the
/// process exit code: 0 success, 2 usage, 3 data, 4 numeric failure.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
            bool interactive = false);

}  // namespace qadpt
