#include "httplib.h"

#include <fstream>
#include <sstream>

#include "dcsft/digest.hpp"
#include "dcsft/sampler.hpp"

namespace dcsft {

namespace {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // request path
};

UrlParts split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw InvalidInput("base URL needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  UrlParts parts;
  parts.origin = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  if (prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0) {
    parts.path = prefix + "/chat/completions";
  } else {
    parts.path = prefix + "/v1/chat/completions";
  }
  return parts;
}

std::string mime_for(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == "png") return "image/png";
  if (ext == "gif") return "image/gif";
  if (ext == "webp") return "image/webp";
  if (ext == "bmp") return "image/bmp";
  return "image/jpeg";
}

std::string image_url_for(const std::string& ref) {
  if (ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 || ref.rfind("data:", 0) == 0)
    return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw InvalidInput("cannot read image " + ref);
  std::ostringstream buf;
  buf << in.rdbuf();
  return "data:" + mime_for(ref) + ";base64," + base64_encode(buf.str());
}

std::string content_text(const json& content) {
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  if (content.is_array()) {
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") out += part.value("text", "");
    }
  }
  return out;
}

}  // namespace

json ChatRequest::to_json() const {
  json j = {{"model", model}, {"messages", messages}, {"temperature", temperature},
            {"top_p", top_p},  {"n", n}};
  if (seed) j["seed"] = *seed;
  return j;
}

json build_messages(const Sample& sample) {
  json content;
  if (sample.image_ref) {
    content = json::array({
        {{"type", "image_url"}, {"image_url", {{"url", image_url_for(*sample.image_ref)}}}},
        {{"type", "text"}, {"text", sample.prompt}},
    });
  } else {
    content = sample.prompt;
  }
  return json::array({{{"role", "user"}, {"content", content}}});
}

struct HttpChatBackend::Impl {
  UrlParts url;
  httplib::Client client;
  httplib::Headers headers;

  explicit Impl(const EndpointConfig& config)
      : url(split_base_url(config.base_url)), client(url.origin) {
    const auto timeout = std::chrono::duration<double>(config.request_timeout);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout).count();
    client.set_connection_timeout(usec / 1000000, usec % 1000000);
    client.set_read_timeout(usec / 1000000, usec % 1000000);
    client.set_write_timeout(usec / 1000000, usec % 1000000);
    if (config.api_key) headers.emplace("Authorization", "Bearer " + *config.api_key);
  }
};

HttpChatBackend::HttpChatBackend(const EndpointConfig& config)
    : impl_(std::make_unique<Impl>(config)) {}

HttpChatBackend::~HttpChatBackend() = default;

ChatResponse HttpChatBackend::complete(const ChatRequest& request) {
  ChatResponse out;
  auto res = impl_->client.Post(impl_->url.path, impl_->headers, request.to_json().dump(),
                                "application/json");
  if (!res) {
    out.error = "transport error: " + httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  if (res->status != 200) {
    out.error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300);
    return out;
  }
  try {
    const json body = json::parse(res->body);
    std::vector<std::pair<int, std::string>> indexed;
    for (const auto& choice : body.at("choices")) {
      const int idx = choice.value("index", static_cast<int>(indexed.size()));
      indexed.emplace_back(idx, content_text(choice.at("message").value("content", json(""))));
    }
    std::stable_sort(indexed.begin(), indexed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [idx, text] : indexed) out.choices.push_back(std::move(text));
  } catch (const json::exception& e) {
    out.status = 0;
    out.error = std::string("malformed completion body: ") + e.what();
  }
  return out;
}

}  // namespace dcsft
