#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace msr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kCheckFailed = 3 };

/// Runs one subcommand (gen-data, train, eval, sr, gradcheck). JSON lines go
/// to `out`, human-readable messages to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace msr::cli
