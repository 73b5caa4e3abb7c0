#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dcsft/mock_endpoint.hpp"
#include "dcsft/sampler.hpp"

using namespace dcsft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("dcsft_test_sampler_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<Sample> cls_samples(int n) {
  std::vector<Sample> v;
  for (int i = 0; i < n; ++i) {
    v.push_back({"q" + std::to_string(i), TaskKind::Classification, "prompt " + std::to_string(i), std::nullopt,
                 LabelAnswer{"cat"}, {}});
  }
  return v;
}

MockEndpointOptions script_for(const std::vector<Sample>& samples) {
  MockEndpointOptions o;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<int> pattern(8, 0);
    for (std::size_t k = 0; k < i % 9 && k < 8; ++k) pattern[k] = 1;
    o.script[samples[i].prompt] = {pattern, "Answer: cat", "Answer: dog"};
  }
  return o;
}

EndpointConfig endpoint_for(const MockEndpoint& m) {
  EndpointConfig e;
  e.base_url = m.base_url();
  e.backoff_base = 0;
  e.request_timeout = 10;
  return e;
}

SamplingParams params8() {
  SamplingParams p;
  p.g = 8;
  p.seed = 1;
  p.model_id = "mock";
  return p;
}

}  // namespace

TEST_CASE("dataset parsing") {
  std::istringstream ok(
      R"({"id":"a","task":"classification","prompt":"p","gold":{"label":"cat"}})"
      "\n\n"
      R"({"id":"b","task":"grounding","prompt":"p","image":"x.jpg","gold":{"box":[1,2,3,4]},"meta":{"width":100,"height":50}})"
      "\n");
  const auto v = parse_dataset(ok);
  REQUIRE(v.size() == 2);
  CHECK(v[1].image_ref == "x.jpg");
  CHECK(std::get<BoxAnswer>(v[1].gold).box == BBox{1, 2, 3, 4});
  const auto size = image_size_of(v[1]);
  REQUIRE(size);
  CHECK(size->width == 100);
  CHECK(size->height == 50);
  CHECK(sample_from_json(sample_to_json(v[1])).meta == v[1].meta);

  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_dataset(in);
    } catch (const DatasetError& e) {
      return e.line();
    }
    return 0;
  };
  const std::string good = R"({"id":"a","task":"generic","prompt":"p","gold":{"answer":"4"}})";
  CHECK(line_of(good + "\n{not json\n") == 2);
  CHECK(line_of(good + "\n" + good + "\n") == 2);  // duplicate id
  CHECK(line_of(R"({"id":"a","task":"classification","prompt":"p","gold":{"answer":"4"}})") == 1);
  CHECK(line_of(R"({"id":"a","task":"weird","prompt":"p","gold":{"answer":"4"}})") == 1);
  CHECK(line_of(R"({"id":"a","task":"grounding","prompt":"p","gold":{"box":[3,3,1,1]}})") == 1);
  CHECK(line_of(R"({"task":"generic","prompt":"p","gold":{"answer":"4"}})") == 1);
}

TEST_CASE("cache keys depend on every sampling input") {
  const auto s = cls_samples(1)[0];
  const auto p = params8();
  const auto k = make_cache_key(s, p);
  CHECK(k.size() == 64);
  auto q = p;
  q.temperature = 0.7;
  CHECK(make_cache_key(s, q) != k);
  q = p;
  q.seed = 2;
  CHECK(make_cache_key(s, q) != k);
  q = p;
  q.model_id = "other";
  CHECK(make_cache_key(s, q) != k);
  auto s2 = s;
  s2.prompt += "!";
  CHECK(make_cache_key(s2, p) != k);
  CHECK(make_cache_key(s, p) == k);
}

TEST_CASE("cache persists and tolerates a torn final line") {
  const auto dir = scratch("cache");
  const auto path = dir / "c.jsonl";
  {
    ResponseCache c(path);
    c.append({"k1", "a", "m", params8(), {"x", "y"}});
    c.append({"k2", "b", "m", params8(), {"z"}});
  }
  { std::ofstream(path, std::ios::app) << R"({"key":"k3","resp)"; }
  ResponseCache c(path);
  CHECK(c.size() == 2);
  CHECK(c.skipped_lines() == 1);
  CHECK(c.lookup("k1") == std::vector<std::string>{"x", "y"});
  CHECK_FALSE(c.lookup("k3"));
  fs::remove_all(dir);
}

TEST_CASE("verify_batch scores with the task verifier") {
  std::vector<Sample> samples{
      {"c", TaskKind::Classification, "p", std::nullopt, LabelAnswer{"cat"}, {}},
      {"g", TaskKind::Grounding, "p", std::nullopt, BoxAnswer{BBox{0, 0, 1792, 896}},
       {{"width", "1792"}, {"height", "896"}}},
  };
  std::vector<ResponseSet> sets{{"g", {"[0, 0, 896, 448]", "[0, 0, 1792, 896]"}, false},
                                {"c", {"Answer: Cat.", "dog"}, false}};
  SamplingParams p;
  p.g = 2;
  const auto v = verify_batch(sets, samples, p);
  REQUIRE(v.size() == 2);
  CHECK(v[0].sample_id == "g");
  CHECK(v[0].rewards == std::vector<double>{1, 0});
  CHECK(v[1].rewards == std::vector<double>{1, 0});
  CHECK(v[1].difficulty == DifficultyLabel::Medium);

  const auto dir = scratch("verified");
  write_verified_jsonl(dir / "v.jsonl", v);
  const auto back = read_verified_jsonl(dir / "v.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].rewards == v[1].rewards);
  CHECK(back[0].responses == v[0].responses);
  fs::remove_all(dir);
}

TEST_CASE("collection against the mock endpoint") {
  const auto samples = cls_samples(20);
  auto opts = script_for(samples);
  opts.latency_ms = 20;
  MockEndpoint mock(opts);
  auto ep = endpoint_for(mock);
  ep.max_in_flight = 3;
  ResponseCache cache;

  const auto r = collect_responses(samples, params8(), ep, cache);
  CHECK(r.failures.empty());
  REQUIRE(r.sets.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(r.sets[i].sample_id == samples[i].id);
    CHECK(r.sets[i].responses.size() == 8);
  }
  CHECK(r.network_requests == 20);
  CHECK(mock.max_concurrent() <= 3);
  CHECK(mock.max_concurrent() >= 2);

  const auto v = verify_batch(r.sets, samples, params8());
  for (std::size_t i = 0; i < 20; ++i) {
    const auto expected = std::min<std::size_t>(i % 9, 8);
    double s = 0;
    for (double x : v[i].rewards) s += x;
    CHECK(static_cast<std::size_t>(s) == expected);
  }

  SUBCASE("a second run is served from the cache") {
    mock.reset_counters();
    const auto again = collect_responses(samples, params8(), ep, cache);
    CHECK(mock.request_count() == 0);
    CHECK(again.cache_hits == 20);
    CHECK(again.network_requests == 0);
    for (std::size_t i = 0; i < 20; ++i) CHECK(again.sets[i].responses == r.sets[i].responses);
  }
}

TEST_CASE("endpoints without n support are topped up") {
  const auto samples = cls_samples(3);
  auto opts = script_for(samples);
  opts.supports_n = false;
  MockEndpoint mock(opts);
  ResponseCache cache;
  const auto r = collect_responses(samples, params8(), endpoint_for(mock), cache);
  REQUIRE(r.sets.size() == 3);
  for (const auto& s : r.sets) CHECK(s.responses.size() == 8);
  CHECK(mock.request_count() == 24);

  auto batched = endpoint_for(mock);
  batched.mode = CompletionMode::Batched;
  ResponseCache fresh;
  const auto b = collect_responses(samples, params8(), batched, fresh);
  CHECK(b.sets.empty());
  CHECK(b.failures.size() == 3);
}

TEST_CASE("a failing sample does not sink the batch") {
  const auto samples = cls_samples(10);
  auto opts = script_for(samples);
  opts.failing_prompts.insert(samples[4].prompt);
  MockEndpoint mock(opts);
  auto ep = endpoint_for(mock);
  ep.max_retries = 2;
  ResponseCache cache;
  const auto r = collect_responses(samples, params8(), ep, cache);
  CHECK(r.sets.size() == 9);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].sample_id == "q4");
  CHECK(r.failures[0].last_status == 500);
  CHECK(cache.size() == 9);
}

TEST_CASE("transient errors are retried") {
  const auto samples = cls_samples(4);
  auto opts = script_for(samples);
  opts.transient_failures = 2;
  MockEndpoint mock(opts);
  ResponseCache cache;
  const auto r = collect_responses(samples, params8(), endpoint_for(mock), cache);
  CHECK(r.failures.empty());
  CHECK(r.sets.size() == 4);
  CHECK(mock.request_count() == 12);
}

TEST_CASE("bad credentials abort the batch") {
  const auto samples = cls_samples(6);
  auto opts = script_for(samples);
  opts.required_api_key = "secret";
  MockEndpoint mock(opts);
  auto ep = endpoint_for(mock);
  ResponseCache cache;
  ep.api_key = "wrong";
  CHECK_THROWS_AS(collect_responses(samples, params8(), ep, cache), AuthError);
  ep.api_key = "secret";
  CHECK(collect_responses(samples, params8(), ep, cache).sets.size() == 6);
}

TEST_CASE("endpoint config validation") {
  EndpointConfig e;
  CHECK_NOTHROW(e.validate());
  e.max_in_flight = 0;
  CHECK_THROWS_AS(e.validate(), InvalidInput);
}

TEST_CASE("messages embed local images") {
  const auto dir = scratch("img");
  { std::ofstream(dir / "a.png", std::ios::binary) << "abc"; }
  Sample s{"i", TaskKind::Classification, "what?", (dir / "a.png").string(), LabelAnswer{"x"}, {}};
  const auto m = build_messages(s);
  const auto& parts = m[0]["content"];
  REQUIRE(parts.is_array());
  bool found = false;
  for (const auto& p : parts) {
    if (p["type"] == "image_url") {
      CHECK(p["image_url"]["url"] == "data:image/png;base64,YWJj");
      found = true;
    }
  }
  CHECK(found);
  s.image_ref = "https://example.com/a.jpg";
  CHECK(build_messages(s)[0]["content"][0]["image_url"]["url"] == "https://example.com/a.jpg");
  fs::remove_all(dir);
}
