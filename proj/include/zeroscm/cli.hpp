#pragma once

#include <string>
#include <vector>

namespace zeroscm {

/// Entry point behind the command-line binary; exposed so tests can drive
/// whole runs in-process. Exit codes: 0 success, 2 usage, 3 data error,
/// 4 numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace zeroscm
