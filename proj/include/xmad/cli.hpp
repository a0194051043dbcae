#pragma once

#include <iosfwd>

#include "xmad/error.hpp"

namespace xmad::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitPartial = 3;

int exit_code(ErrorKind kind);

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xmad::cli
