#pragma once

// Command-line harness: generate, train, eval, ablate.
//
// Exit codes:
//   0  success
//   2  configuration error (bad flag, unknown key, invalid value)
//   3  runtime failure (missing or corrupt input, I/O error)
//   4  training diverged

#include <iosfwd>
#include <string>
#include <vector>

namespace hperl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitDiverged = 4;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Worker cap from HPERL_THREADS (defaults to the hardware concurrency).
int worker_threads();

}  // namespace hperl
