#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace patchlink {

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs argv[0] (looked up on PATH) without a shell. `input`, when given, is
// fed on stdin through a temporary file.
ProcessResult run_process(const std::vector<std::string>& argv,
                          const std::optional<std::string>& input = std::nullopt,
                          const std::optional<std::filesystem::path>& cwd = std::nullopt);

}  // namespace patchlink
