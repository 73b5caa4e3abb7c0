#pragma once

// Scripted OpenAI-compatible chat-completions server for tests and demos.

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

namespace dcsft {

/// Responses for one prompt: choice k answers `correct` when pattern[k] is 1
/// and `wrong` otherwise.
struct MockScriptEntry {
  std::vector<int> pattern;
  std::string correct;
  std::string wrong;
};

struct MockEndpointOptions {
  bool supports_n = true;
  int latency_ms = 0;
  std::map<std::string, MockScriptEntry> script;  // keyed by prompt text
  std::set<std::string> failing_prompts;          // always answer 500
  int transient_failures = 0;                     // first N requests per prompt get 503
  std::optional<std::string> required_api_key;    // 401 unless the bearer token matches
  std::string fallback_response = "unknown";
};

/// Reads {"supports_n", "latency_ms", "transient_failures", "required_api_key",
/// "failing_prompts": [..], "script": {prompt: {"pattern", "correct", "wrong"}}}.
MockEndpointOptions mock_options_from_json(const nlohmann::json& j);
nlohmann::json mock_options_to_json(const MockEndpointOptions& o);

class MockEndpoint {
 public:
  /// Starts serving on 127.0.0.1; port 0 picks a free port.
  explicit MockEndpoint(MockEndpointOptions options, int port = 0);
  ~MockEndpoint();
  MockEndpoint(const MockEndpoint&) = delete;
  MockEndpoint& operator=(const MockEndpoint&) = delete;

  int port() const { return port_; }
  std::string base_url() const;

  std::size_t request_count() const { return requests_.load(); }
  int max_concurrent() const { return max_concurrent_.load(); }
  void reset_counters();

  /// Blocks until stop() is called from another thread.
  void wait();
  void stop();

 private:
  struct Server;
  std::unique_ptr<Server> server_;
  MockEndpointOptions options_;
  int port_ = 0;
  std::thread thread_;

  std::atomic<std::size_t> requests_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_concurrent_{0};
  std::mutex counter_mutex_;
  std::map<std::string, int> per_prompt_requests_;
};

}  // namespace dcsft
