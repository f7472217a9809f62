#pragma once

#include <iosfwd>

namespace dinf::harness {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitDeadlock = 3, kExitRuntime = 4 };

// Entry point of the dinfsim tool. Never throws; maps failures to exit codes.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dinf::harness
