#include "dcsft/mock_endpoint.hpp"

#include "httplib.h"

#include <chrono>
#include <stdexcept>

namespace dcsft {

using json = nlohmann::json;

namespace {

std::string prompt_of(const json& body) {
  const json& content = body.at("messages").at(0).at("content");
  if (content.is_string()) return content.get<std::string>();
  for (const auto& part : content) {
    if (part.value("type", "") == "text") return part.value("text", "");
  }
  return {};
}

json completion_body(const std::string& model, const std::vector<std::string>& texts) {
  json choices = json::array();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    choices.push_back({{"index", i},
                       {"message", {{"role", "assistant"}, {"content", texts[i]}}},
                       {"finish_reason", "stop"}});
  }
  return {{"id", "mock"}, {"object", "chat.completion"}, {"model", model}, {"choices", choices}};
}

}  // namespace

MockEndpointOptions mock_options_from_json(const json& j) {
  MockEndpointOptions o;
  o.supports_n = j.value("supports_n", true);
  o.latency_ms = j.value("latency_ms", 0);
  o.transient_failures = j.value("transient_failures", 0);
  o.fallback_response = j.value("fallback_response", o.fallback_response);
  if (j.contains("required_api_key")) o.required_api_key = j.at("required_api_key").get<std::string>();
  if (j.contains("failing_prompts"))
    for (const auto& p : j.at("failing_prompts")) o.failing_prompts.insert(p.get<std::string>());
  if (j.contains("script")) {
    for (const auto& [prompt, e] : j.at("script").items()) {
      o.script[prompt] = MockScriptEntry{e.at("pattern").get<std::vector<int>>(),
                                         e.at("correct").get<std::string>(),
                                         e.at("wrong").get<std::string>()};
    }
  }
  return o;
}

json mock_options_to_json(const MockEndpointOptions& o) {
  json script = json::object();
  for (const auto& [prompt, e] : o.script)
    script[prompt] = {{"pattern", e.pattern}, {"correct", e.correct}, {"wrong", e.wrong}};
  json j = {{"supports_n", o.supports_n},
            {"latency_ms", o.latency_ms},
            {"transient_failures", o.transient_failures},
            {"fallback_response", o.fallback_response},
            {"failing_prompts", o.failing_prompts},
            {"script", script}};
  if (o.required_api_key) j["required_api_key"] = *o.required_api_key;
  return j;
}

struct MockEndpoint::Server {
  httplib::Server http;
};

MockEndpoint::MockEndpoint(MockEndpointOptions options, int port)
    : server_(std::make_unique<Server>()), options_(std::move(options)) {
  auto& http = server_->http;
  http.new_task_queue = [] { return new httplib::ThreadPool(64); };
  http.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
    requests_.fetch_add(1);
    const int now = in_flight_.fetch_add(1) + 1;
    int seen = max_concurrent_.load();
    while (now > seen && !max_concurrent_.compare_exchange_weak(seen, now)) {
    }
    struct Leave {
      std::atomic<int>& counter;
      ~Leave() { counter.fetch_sub(1); }
    } leave{in_flight_};

    if (options_.latency_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));

    if (options_.required_api_key &&
        req.get_header_value("Authorization") != "Bearer " + *options_.required_api_key) {
      res.status = 401;
      res.set_content(R"({"error":{"message":"invalid api key"}})", "application/json");
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      return;
    }
    const std::string prompt = prompt_of(body);
    int attempt = 0;
    {
      std::lock_guard lock(counter_mutex_);
      attempt = per_prompt_requests_[prompt]++;
    }
    if (options_.failing_prompts.count(prompt) != 0) {
      res.status = 500;
      res.set_content(R"({"error":{"message":"scripted failure"}})", "application/json");
      return;
    }
    if (attempt < options_.transient_failures) {
      res.status = 503;
      return;
    }

    const int n = options_.supports_n ? body.value("n", 1) : 1;
    std::vector<std::string> texts;
    auto it = options_.script.find(prompt);
    for (int k = 0; k < n; ++k) {
      if (it == options_.script.end()) {
        texts.push_back(options_.fallback_response);
        continue;
      }
      const auto& pattern = it->second.pattern;
      // Single-choice requests walk the pattern by arrival order; seeds are
      // not interpreted.
      const int index = n == 1 ? (attempt - options_.transient_failures) : k;
      const bool ok = !pattern.empty() && pattern[static_cast<std::size_t>(index) % pattern.size()] != 0;
      texts.push_back(ok ? it->second.correct : it->second.wrong);
    }
    res.set_content(completion_body(body.value("model", ""), texts).dump(), "application/json");
  });

  if (port == 0) {
    port_ = http.bind_to_any_port("127.0.0.1");
  } else if (http.bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw std::runtime_error("mock endpoint: cannot bind port");
  thread_ = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
}

MockEndpoint::~MockEndpoint() { stop(); }

std::string MockEndpoint::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

void MockEndpoint::reset_counters() {
  requests_.store(0);
  max_concurrent_.store(0);
  std::lock_guard lock(counter_mutex_);
  per_prompt_requests_.clear();
}

void MockEndpoint::wait() {
  if (thread_.joinable()) thread_.join();
}

void MockEndpoint::stop() {
  server_->http.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace dcsft
