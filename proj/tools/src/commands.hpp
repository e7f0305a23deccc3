#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dansep::cli {

/// Runs one subcommand. args excludes the program name. Returns 0 on success,
/// 1 on a runtime failure and 2 on a usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dansep::cli
