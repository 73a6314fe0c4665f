#pragma once

#include <iosfwd>

namespace gtep::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `gtep` invocation. Reports go to `out`, diagnostics and the
/// effective-config line to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gtep::cli
