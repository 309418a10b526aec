#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xcnn::cli {

/// Runs one invocation; `args` excludes the program name. Returns the exit
/// code: 0 on success, 1 on a runtime failure, 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Seed list from "0..4", "0,3,7" or a mix like "0..2,9".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace xcnn::cli
