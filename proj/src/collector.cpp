#include <algorithm>
#include <cmath>
#include <thread>

#include "dcsft/rng.hpp"
#include "dcsft/sampler.hpp"

namespace dcsft {

void EndpointConfig::validate() const {
  if (max_in_flight < 1) throw InvalidInput("max_in_flight must be >= 1");
  if (!(request_timeout > 0)) throw InvalidInput("request timeout must be > 0");
  if (max_retries < 0) throw InvalidInput("max_retries must be >= 0");
  if (backoff_base < 0) throw InvalidInput("backoff base must be >= 0");
}

namespace {

struct SharedState {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::atomic<std::size_t> requests{0};
  std::mutex auth_mutex;
  std::string auth_message;
};

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

class SampleFetcher {
 public:
  SampleFetcher(ChatBackend& backend, const EndpointConfig& endpoint, SharedState& state,
                std::uint64_t jitter_seed)
      : backend_(backend), endpoint_(endpoint), state_(state), jitter_(jitter_seed) {}

  // Either the responses or a failure; throws AuthError on 401/403.
  std::variant<std::vector<std::string>, SampleFailure> fetch(const Sample& sample,
                                                              const SamplingParams& params) {
    ChatRequest base;
    base.model = params.model_id;
    base.temperature = params.temperature;
    base.top_p = params.top_p;
    try {
      base.messages = build_messages(sample);
    } catch (const InvalidInput& e) {
      return SampleFailure{sample.id, e.what(), 0};
    }

    std::vector<std::string> responses;
    auto fail = [&](const ChatResponse& r) {
      return SampleFailure{sample.id, r.error.empty() ? "request failed" : r.error, r.status};
    };
    auto single = [&](int k) -> std::optional<SampleFailure> {
      ChatRequest req = base;
      req.n = 1;
      if (params.seed) req.seed = *params.seed + k;
      ChatResponse r = send(req);
      if (r.status != 200 || r.choices.empty()) return fail(r);
      responses.push_back(std::move(r.choices.front()));
      return std::nullopt;
    };

    if (endpoint_.mode == CompletionMode::PerSeed) {
      for (int k = 0; k < params.g; ++k) {
        if (auto f = single(k)) return *f;
      }
      return responses;
    }

    ChatRequest req = base;
    req.n = params.g;
    req.seed = params.seed;
    ChatResponse r = send(req);
    if (r.status != 200) return fail(r);
    for (auto& c : r.choices) {
      if (static_cast<int>(responses.size()) == params.g) break;
      responses.push_back(std::move(c));
    }
    if (static_cast<int>(responses.size()) < params.g && endpoint_.mode == CompletionMode::Batched) {
      return SampleFailure{sample.id,
                           "endpoint returned " + std::to_string(responses.size()) + " of " +
                               std::to_string(params.g) + " choices",
                           r.status};
    }
    for (int k = static_cast<int>(responses.size()); k < params.g; ++k) {
      if (auto f = single(k)) return *f;
    }
    return responses;
  }

 private:
  ChatResponse send(const ChatRequest& req) {
    ChatResponse r;
    for (int attempt = 0;; ++attempt) {
      if (state_.abort.load()) {
        r.status = 0;
        r.error = "aborted";
        return r;
      }
      r = backend_.complete(req);
      state_.requests.fetch_add(1);
      if (r.status == 200) return r;
      if (r.status == 401 || r.status == 403) throw AuthError(r.error);
      if (!retryable(r.status) || attempt >= endpoint_.max_retries) return r;
      const double delay =
          endpoint_.backoff_base * std::ldexp(1.0, attempt) * (0.5 + 0.5 * jitter_.uniform());
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
  }

  ChatBackend& backend_;
  const EndpointConfig& endpoint_;
  SharedState& state_;
  Rng jitter_;
};

}  // namespace

CollectionResult collect_responses(std::span<const Sample> samples, const SamplingParams& params,
                                   const EndpointConfig& endpoint, ResponseCache& cache,
                                   const BackendFactory& make_backend) {
  params.validate();
  endpoint.validate();

  const std::size_t n = samples.size();
  std::vector<std::optional<ResponseSet>> sets(n);
  std::vector<std::optional<SampleFailure>> failures(n);
  std::vector<std::string> keys(n);
  std::vector<std::size_t> pending;
  CollectionResult result;

  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = make_cache_key(samples[i], params);
    if (auto hit = cache.lookup(keys[i]); hit && static_cast<int>(hit->size()) == params.g) {
      sets[i] = ResponseSet{samples[i].id, std::move(*hit), true};
      ++result.cache_hits;
    } else {
      pending.push_back(i);
    }
  }

  SharedState state;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(endpoint.max_in_flight), pending.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        std::unique_ptr<ChatBackend> backend =
            make_backend ? make_backend() : std::make_unique<HttpChatBackend>(endpoint);
        SampleFetcher fetcher(*backend, endpoint, state,
                              derive_seed(params.seed.value_or(0), static_cast<std::uint64_t>(w)));
        for (;;) {
          if (state.abort.load()) return;
          const std::size_t slot = state.next.fetch_add(1);
          if (slot >= pending.size()) return;
          const std::size_t i = pending[slot];
          try {
            auto outcome = fetcher.fetch(samples[i], params);
            if (auto* responses = std::get_if<std::vector<std::string>>(&outcome)) {
              cache.append(CacheEntry{keys[i], samples[i].id, params.model_id, params, *responses});
              sets[i] = ResponseSet{samples[i].id, std::move(*responses), false};
            } else {
              failures[i] = std::get<SampleFailure>(std::move(outcome));
            }
          } catch (const AuthError& e) {
            std::lock_guard lock(state.auth_mutex);
            if (!state.abort.exchange(true)) state.auth_message = e.what();
            return;
          } catch (const std::exception& e) {
            failures[i] = SampleFailure{samples[i].id, e.what(), 0};
          }
        }
      });
    }
  }

  if (state.abort.load()) throw AuthError("authentication rejected by endpoint: " + state.auth_message);

  result.network_requests = state.requests.load();
  for (std::size_t i = 0; i < n; ++i) {
    if (sets[i]) result.sets.push_back(std::move(*sets[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

}  // namespace dcsft
