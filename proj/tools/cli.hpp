#pragma once

#include <iosfwd>

namespace iscf::cli {

// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNonFiniteLoss = 3;
inline constexpr int kCheckFailed = 4;
inline constexpr int kInternalError = 5;

/// Parses and runs one subcommand. Human-readable progress goes to `out`,
/// diagnostics to `err`; machine artifacts are files.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iscf::cli
