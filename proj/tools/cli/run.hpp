#pragma once

#include <iosfwd>

namespace perfect::cli {

// Exit codes: 0 success, 1 internal error, 2 config error, 3 cap breach,
// 4 oracle unavailable. Errors are reported as one JSON object on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace perfect::cli
