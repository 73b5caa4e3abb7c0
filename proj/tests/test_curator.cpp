#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "dcsft/curator.hpp"
#include "dcsft/rng.hpp"
#include "dcsft/sampler.hpp"

using namespace dcsft;
namespace fs = std::filesystem;

namespace {

VerifiedResponseSet vset(const std::string& id, int correct, int g = 8) {
  std::vector<double> r(static_cast<std::size_t>(g), 0.0);
  for (int k = 0; k < correct; ++k) r[static_cast<std::size_t>(k)] = 1.0;
  SamplingParams p;
  p.g = g;
  return VerifiedResponseSet::from_rewards(id, std::vector<std::string>(r.size(), "x"), r, p);
}

// Interleaved 40 easy, 40 medium, 20 hard.
std::vector<VerifiedResponseSet> pool(int easy = 40, int medium = 40, int hard = 20) {
  std::vector<VerifiedResponseSet> v;
  int e = 0, m = 0, h = 0;
  char buf[16];
  for (int i = 0; e < easy || m < medium || h < hard; ++i) {
    std::snprintf(buf, sizeof buf, "s%04d", i);
    if (i % 3 == 0 && e < easy) {
      v.push_back(vset(buf, 8));
      ++e;
    } else if (i % 3 == 1 && m < medium) {
      v.push_back(vset(buf, 3));
      ++m;
    } else if (h < hard) {
      v.push_back(vset(buf, 0));
      ++h;
    } else if (e < easy) {
      v.push_back(vset(buf, 8));
      ++e;
    } else {
      v.push_back(vset(buf, 5));
      ++m;
    }
  }
  return v;
}

std::size_t count_in(const std::vector<std::string>& ids, const std::vector<std::string>& bucket) {
  const std::set<std::string> b(bucket.begin(), bucket.end());
  return static_cast<std::size_t>(std::count_if(ids.begin(), ids.end(), [&](auto& id) { return b.count(id); }));
}

// Brute-force argmin over k of |k / (n + k) - rho|, smallest k on ties.
std::size_t brute_k(std::size_t n, double rho) {
  std::size_t best = 0;
  double best_d = std::abs(0.0 - rho);
  for (std::size_t k = 1; k <= 100000; ++k) {
    const double d = std::abs(static_cast<double>(k) / static_cast<double>(n + k) - rho);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("bucketing keeps input order") {
  const auto v = pool();
  const auto b = bucket(v);
  CHECK(b.easy.size() == 40);
  CHECK(b.medium.size() == 40);
  CHECK(b.hard.size() == 20);
  CHECK(std::is_sorted(b.easy.begin(), b.easy.end()));
  CHECK(std::is_sorted(b.hard.begin(), b.hard.end()));
}

TEST_CASE("variant sizes on a 40/40/20 pool") {
  const auto v = pool();
  const auto b = bucket(v);

  auto m = build_curated_set(v, CurationPlan::of(PlanVariant::SftM));
  CHECK(m.ids.size() == 40);
  CHECK(count_in(m.ids, b.medium) == 40);

  auto em = build_curated_set(v, CurationPlan::of(PlanVariant::SftEM));
  CHECK(em.ids.size() == 80);
  CHECK(count_in(em.ids, b.hard) == 0);

  auto full = build_curated_set(v, CurationPlan::of(PlanVariant::Full));
  CHECK(full.ids.size() == 100);

  auto hr = build_curated_set(v, CurationPlan::hard_ratio(0.2));
  CHECK(hr.ids.size() == 100);
  CHECK(count_in(hr.ids, b.hard) == 20);
  CHECK(*hr.manifest.achieved_hard_ratio() == doctest::Approx(0.2));

  auto hr10 = build_curated_set(v, CurationPlan::hard_ratio(0.1));
  CHECK(count_in(hr10.ids, b.hard) == 9);  // 9/89 = 0.1011 beats 8/88 and 10/90
  CHECK(hr10.ids.size() == 89);

  auto hard_only = build_curated_set(v, CurationPlan::bucket_only(DifficultyLabel::Hard));
  CHECK(hard_only.ids.size() == 20);

  CHECK(m.manifest.easy_count == 40);
  CHECK(m.manifest.medium_count == 40);
  CHECK(m.manifest.hard_count == 20);
}

TEST_CASE("infeasible hard ratio reports the achievable maximum") {
  const auto v = pool();
  try {
    build_curated_set(v, CurationPlan::hard_ratio(0.25));
    FAIL("expected InfeasiblePlan");
  } catch (const InfeasiblePlan& e) {
    CHECK(e.max_achievable_rho() == doctest::Approx(0.2));
  }
  CHECK_THROWS_AS(build_curated_set(v, CurationPlan::hard_ratio(1.0)), InfeasiblePlan);
}

TEST_CASE("hard ratio zero equals easy plus medium") {
  const auto v = pool();
  auto a = build_curated_set(v, CurationPlan::hard_ratio(0.0));
  auto b = build_curated_set(v, CurationPlan::of(PlanVariant::SftEM));
  std::sort(a.ids.begin(), a.ids.end());
  std::sort(b.ids.begin(), b.ids.end());
  CHECK(a.ids == b.ids);
}

TEST_CASE("hard count matches brute force") {
  CHECK(hard_count_for_ratio(80, 0.0) == 0u);
  CHECK(hard_count_for_ratio(80, 0.2) == 20u);
  CHECK_FALSE(hard_count_for_ratio(80, 1.0));
  CHECK(hard_count_for_ratio(0, 1.0) == 0u);
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.below(2000);
    const double rho = rng.uniform(0.0, 0.9);
    CHECK(*hard_count_for_ratio(n, rho) == brute_k(n, rho));
  }
  for (double rho : {0.05, 0.135, 0.25, 0.5}) {
    for (std::size_t n : {1u, 7u, 19u, 95u, 1500u}) CHECK(*hard_count_for_ratio(n, rho) == brute_k(n, rho));
  }
}

TEST_CASE("balancing subsamples to the smallest bucket") {
  const auto v = pool();
  const auto b = bucket(v);
  const auto bal = balance_to_smallest(b, 42);
  CHECK(bal.easy.size() == 20);
  CHECK(bal.medium.size() == 20);
  CHECK(bal.hard.size() == 20);
  CHECK(std::is_sorted(bal.easy.begin(), bal.easy.end()));
  CHECK(count_in(bal.easy, b.easy) == 20);
  CHECK(balance_to_smallest(b, 42).easy == bal.easy);
  CHECK(balance_to_smallest(b, 43).easy != bal.easy);

  auto plan = CurationPlan::bucket_only(DifficultyLabel::Easy, Balance::MinSubset);
  const auto cs = build_curated_set(v, plan);
  CHECK(cs.ids.size() == 20);
  CHECK_THROWS_AS(balance_to_smallest(Buckets{}, 1), InvalidInput);
}

TEST_CASE("balanced bucket sets have equal sizes across buckets") {
  Rng rng(23);
  for (int t = 0; t < 30; ++t) {
    const int e = 1 + static_cast<int>(rng.below(50)), m = 1 + static_cast<int>(rng.below(50)),
              h = 1 + static_cast<int>(rng.below(50));
    const auto v = pool(e, m, h);
    std::size_t sizes[3];
    int i = 0;
    for (auto l : {DifficultyLabel::Easy, DifficultyLabel::Medium, DifficultyLabel::Hard}) {
      auto p = CurationPlan::bucket_only(l, Balance::MinSubset);
      p.seed = static_cast<std::uint64_t>(t);
      sizes[i++] = build_curated_set(v, p).ids.size();
    }
    CHECK(sizes[0] == sizes[1]);
    CHECK(sizes[1] == sizes[2]);
    CHECK(sizes[0] == static_cast<std::size_t>(std::min({e, m, h})));
  }
}

TEST_CASE("curation is deterministic in the seed and has no duplicates") {
  const auto v = pool(300, 200, 100);
  auto plan = CurationPlan::hard_ratio(0.135);
  plan.seed = 9;
  const auto a = build_curated_set(v, plan);
  const auto b = build_curated_set(v, plan);
  CHECK(a.ids == b.ids);
  CHECK(a.manifest.to_json() == b.manifest.to_json());
  CHECK(std::set<std::string>(a.ids.begin(), a.ids.end()).size() == a.ids.size());
  plan.seed = 10;
  const auto c = build_curated_set(v, plan);
  CHECK(c.ids != a.ids);
}

TEST_CASE("target size subsamples") {
  const auto v = pool();
  auto plan = CurationPlan::of(PlanVariant::Full);
  plan.target_size = 30;
  CHECK(build_curated_set(v, plan).ids.size() == 30);
  plan.target_size = 1000;
  CHECK_THROWS_AS(build_curated_set(v, plan), InvalidInput);
  auto bad = CurationPlan::hard_ratio(0.1);
  bad.target_size = 10;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("empty input yields an empty set") {
  const std::vector<VerifiedResponseSet> none;
  const auto cs = build_curated_set(none, CurationPlan::of(PlanVariant::SftEM));
  CHECK(cs.ids.empty());
  CHECK(cs.manifest.emitted_count == 0);
  CHECK_FALSE(cs.manifest.achieved_hard_ratio());
}

TEST_CASE("plan names round-trip") {
  for (const char* n : {"bucket:easy", "bucket:medium", "bucket:hard", "sft-m", "sft-em", "full", "hard-ratio:0.05"}) {
    CHECK(CurationPlan::parse(n).name() == n);
  }
  CHECK_THROWS_AS(CurationPlan::parse("nonsense"), InvalidInput);
  CHECK_THROWS_AS(CurationPlan::hard_ratio(1.5).validate(), InvalidInput);
}

TEST_CASE("manifest json") {
  const auto v = pool();
  auto plan = CurationPlan::hard_ratio(0.2);
  plan.seed = 3;
  const auto cs = build_curated_set(v, plan);
  const auto j = cs.manifest.to_json();
  CHECK(j["plan"]["name"] == "hard-ratio:0.2");
  CHECK(j["plan"]["seed"] == 3);
  CHECK(j["bucket_counts"]["hard"] == 20);
  CHECK(j["input_digest"] == verified_digest(v));
  CHECK(cs.manifest.emitted_count == cs.ids.size());
}

TEST_CASE("sft records") {
  Sample cls{"c1", TaskKind::Classification, "What is this?", std::string("img/1.jpg"), LabelAnswer{"tabby cat"}, {}};
  auto r = sft_record(cls);
  CHECK(r["messages"][0]["content"] == "<image>What is this?");
  CHECK(r["messages"][1]["role"] == "assistant");
  CHECK(r["messages"][1]["content"] == "tabby cat");
  CHECK(r["images"][0] == "img/1.jpg");

  Sample txt{"t1", TaskKind::Generic, "2+2?", std::nullopt, TextAnswer{"4"}, {}};
  auto t = sft_record(txt);
  CHECK(t["messages"][0]["content"] == "2+2?");
  CHECK_FALSE(t.contains("images"));

  Sample big{"g1", TaskKind::Grounding, "Find the dog", std::string("big.jpg"), BoxAnswer{BBox{0, 0, 1792, 896}},
             {{"width", "1792"}, {"height", "896"}}};
  CHECK(render_answer(big) == "[0, 0, 896, 448]");
  Sample small{"g2", TaskKind::Grounding, "Find", std::nullopt, BoxAnswer{BBox{1.5, 2, 30, 40}}, {}};
  CHECK(render_answer(small) == "[1.5, 2, 30, 40]");
}

TEST_CASE("emitted dataset round-trips") {
  const fs::path dir = fs::temp_directory_path() / "dcsft_test_curator";
  fs::create_directories(dir);
  std::vector<Sample> samples;
  for (int i = 0; i < 5; ++i) {
    samples.push_back({"s" + std::to_string(i), TaskKind::Classification, "p" + std::to_string(i), std::nullopt,
                       LabelAnswer{"l" + std::to_string(i)}, {}});
  }
  const std::vector<std::string> ids{"s3", "s0", "s4"};
  emit_sft_dataset(ids, samples, dir / "out.jsonl");
  std::ifstream in(dir / "out.jsonl");
  std::string line;
  std::vector<std::string> got;
  while (std::getline(in, line)) got.push_back(nlohmann::json::parse(line)["messages"][1]["content"]);
  CHECK(got == std::vector<std::string>{"l3", "l0", "l4"});

  const std::vector<std::string> missing{"nope"};
  CHECK_THROWS_AS(emit_sft_dataset(missing, samples, dir / "bad.jsonl"), InvalidInput);
  fs::remove_all(dir);
}
