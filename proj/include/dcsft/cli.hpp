#pragma once

// `dcsft` command line: sample, curate, stats, advantage, lab.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace dcsft {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kDefaultApiKeyEnv = "OPENAI_API_KEY";

/// One line of the append-only run log.
struct RunRecord {
  std::string subcommand;
  nlohmann::json config;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::vector<std::string> outputs;
  double duration_s = 0;
  int exit_code = 0;
  std::string started_at;  // UTC, ISO 8601
  std::string tool_version;

  nlohmann::json to_json() const;
};

/// Appends one JSON line to `path`, creating parent directories.
void append_run_record(const std::filesystem::path& path, const RunRecord& record);

/// sha256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

/// Runs the CLI on `args` (without the program name) and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcsft
