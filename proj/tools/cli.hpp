#pragma once

#include <atomic>
#include <ostream>
#include <string>
#include <vector>

namespace privleak::cli {

enum ExitCode : int { kOk = 0, kPipelineFailure = 1, kUsage = 2 };

/// Runs `privleak <args...>` (args exclude the program name). Tables and
/// results go to `out`, progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::atomic<bool>* cancel = nullptr);

}  // namespace privleak::cli
