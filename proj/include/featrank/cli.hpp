#pragma once

#include <ostream>

namespace featrank {

/// Entry point behind the featrank binary. Returns the process exit code:
/// 0 on success, 1 on usage or configuration errors, 2 on runtime errors or
/// when any training run diverged.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace featrank
