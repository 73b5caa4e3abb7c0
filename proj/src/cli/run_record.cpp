#include <fstream>
#include <sstream>

#include "dcsft/cli.hpp"
#include "dcsft/digest.hpp"

namespace dcsft {

nlohmann::json RunRecord::to_json() const {
  return {{"subcommand", subcommand},   {"config", config},       {"input_digests", input_digests},
          {"outputs", outputs},         {"duration_s", duration_s}, {"exit_code", exit_code},
          {"started_at", started_at},   {"tool_version", tool_version}};
}

void append_run_record(const std::filesystem::path& path, const RunRecord& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to run log " + path.string());
  out << record.to_json().dump() << '\n';
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

}  // namespace dcsft
