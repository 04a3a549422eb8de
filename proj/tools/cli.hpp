#pragma once

#include <ostream>

namespace gma::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Entry point of the `gma` tool. Exit codes: 0 success, 1 configuration or
/// usage error, 2 data error, 3 internal error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gma::cli
