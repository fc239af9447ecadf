#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crossup::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kDataError = 2,
    kNumericFailure = 3,
};

/// Environment variable naming the directory for checkpoints when
/// --checkpoint is not given.
inline constexpr const char* kCheckpointDirEnv = "CROSSUP_CHECKPOINT_DIR";

/// Runs one command line (without the program name). Results go to `out`,
/// logs and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// argv-style entry point; argv[0] is the program name.
int run(int argc, const char* const* argv);

} // namespace crossup::cli
