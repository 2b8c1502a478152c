#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace docrep::cli {

/// Runs one `docrep` invocation; args excludes the program name. Returns
/// the process exit code. Failures print a one-line cause to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace docrep::cli
