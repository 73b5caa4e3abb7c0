#pragma once

// G-way response collection against an OpenAI-compatible chat-completions
// endpoint, with a bounded number of in-flight requests, retries and an
// append-only on-disk cache.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcsft/core_model.hpp"
#include "dcsft/verifiers.hpp"

namespace dcsft {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset I/O

/// Malformed dataset line; `line()` is 1-based.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

Sample sample_from_json(const json& j);
json sample_to_json(const Sample& s);

/// One Sample per non-blank line, in file order. Duplicate ids are rejected.
std::vector<Sample> load_dataset(const std::filesystem::path& path);
std::vector<Sample> parse_dataset(std::istream& in);

/// Original image size from `meta.width` / `meta.height`, when both are present.
std::optional<ImageSize> image_size_of(const Sample& s);

// ---------------------------------------------------------------------------
// Endpoint and cache

enum class CompletionMode {
  Auto,     ///< ask for n = g, top up with single requests if fewer come back
  Batched,  ///< one request with n = g; fewer choices is an error
  PerSeed,  ///< g requests with n = 1 and seed + k
};

struct EndpointConfig {
  std::string base_url = "http://localhost:8000";
  std::optional<std::string> api_key;
  int max_in_flight = 8;
  double request_timeout = 60.0;  // seconds
  int max_retries = 3;
  double backoff_base = 0.5;  // seconds
  CompletionMode mode = CompletionMode::Auto;

  void validate() const;
};

/// Hex SHA-256 over (model, sample id, prompt, image, temperature, top_p, g, seed).
std::string make_cache_key(const Sample& sample, const SamplingParams& params);

struct CacheEntry {
  std::string key;
  std::string sample_id;
  std::string model;
  SamplingParams params;
  std::vector<std::string> responses;
};

json cache_entry_to_json(const CacheEntry& e);
CacheEntry cache_entry_from_json(const json& j);

/// Append-only JSONL cache. Reads may run concurrently; appends are
/// serialized and flushed line by line. A later line for the same key wins.
class ResponseCache {
 public:
  /// In-memory cache with no backing file.
  ResponseCache() = default;
  /// Loads `path` if it exists and appends new entries to it.
  explicit ResponseCache(std::filesystem::path path);

  std::optional<std::vector<std::string>> lookup(const std::string& key) const;
  void append(const CacheEntry& entry);

  std::size_t size() const;
  /// Lines skipped on load because they did not parse (e.g. a torn final write).
  std::size_t skipped_lines() const { return skipped_lines_; }

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex map_mutex_;
  std::mutex file_mutex_;
  std::map<std::string, std::vector<std::string>> entries_;
  std::size_t skipped_lines_ = 0;
};

// ---------------------------------------------------------------------------
// Wire protocol

struct ChatRequest {
  std::string model;
  json messages;
  double temperature = 0.9;
  double top_p = 1.0;
  int n = 1;
  std::optional<std::int64_t> seed;

  json to_json() const;
};

struct ChatResponse {
  int status = 0;  ///< HTTP status; 0 when the transport failed
  std::vector<std::string> choices;
  std::string error;
};

/// Transport seam; the HTTP implementation is the production one.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

/// POST {base_url}/v1/chat/completions. Not shared between threads; the
/// collector creates one per worker.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(const EndpointConfig& config);
  ~HttpChatBackend() override;
  ChatResponse complete(const ChatRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

using BackendFactory = std::function<std::unique_ptr<ChatBackend>()>;

/// User message for a sample: plain text, or an image part plus text. Local
/// image files are embedded as base64 data URLs; http(s) and data URLs pass
/// through unchanged.
json build_messages(const Sample& sample);

// ---------------------------------------------------------------------------
// Collection

/// Raised when the endpoint rejects credentials; aborts the whole batch.
class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ResponseSet {
  std::string sample_id;
  std::vector<std::string> responses;
  bool from_cache = false;
};

struct SampleFailure {
  std::string sample_id;
  std::string message;
  int last_status = 0;
};

struct CollectionResult {
  /// Input order. Failed samples have no entry here.
  std::vector<ResponseSet> sets;
  std::vector<SampleFailure> failures;
  std::size_t cache_hits = 0;
  std::size_t network_requests = 0;
};

/// Collects exactly params.g responses per sample. Cache hits skip the
/// network. Failures after retries are reported per sample; an auth failure
/// throws AuthError once in-flight work has drained.
CollectionResult collect_responses(std::span<const Sample> samples, const SamplingParams& params,
                                   const EndpointConfig& endpoint, ResponseCache& cache,
                                   const BackendFactory& make_backend = {});

// ---------------------------------------------------------------------------
// Verification

struct VerifyOptions {
  double iou_threshold = kDefaultIouThreshold;
  std::int64_t max_pixels = kDefaultMaxPixels;
};

/// Reward for a single response under the sample's task verifier. Grounding
/// golds are mapped into the resized image space when the sample carries
/// its original size in meta.
double score_response(const Sample& sample, std::string_view response, const VerifyOptions& opts);

/// Applies the task verifier to every response. Sets are matched to samples
/// by id; output follows the order of `sets`.
std::vector<VerifiedResponseSet> verify_batch(std::span<const ResponseSet> sets,
                                              std::span<const Sample> samples,
                                              const SamplingParams& params,
                                              const VerifyOptions& opts = {});

json verified_to_json(const VerifiedResponseSet& v);
VerifiedResponseSet verified_from_json(const json& j);
void write_verified_jsonl(const std::filesystem::path& path,
                          std::span<const VerifiedResponseSet> sets);
std::vector<VerifiedResponseSet> read_verified_jsonl(const std::filesystem::path& path);

}  // namespace dcsft
