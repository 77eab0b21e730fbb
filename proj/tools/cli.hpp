#pragma once

#include <iosfwd>

namespace l2rm::cli {

/// Parses argv and runs one subcommand. Payloads (or the path of the file
/// written) go to `out`, diagnostics and usage to `err`. Returns the exit code:
/// 0 success, 1 failed check or runtime error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace l2rm::cli
