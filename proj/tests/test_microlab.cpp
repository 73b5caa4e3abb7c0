#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "doctest.h"
#include "dcsft/microlab/experiment.hpp"
#include "dcsft/microlab/trainers.hpp"

using namespace dcsft;
using namespace dcsft::lab;

namespace {

SoftmaxPolicy random_policy(std::size_t c, std::size_t d, std::uint64_t seed, double scale = 0.5,
                            double tau = 0.9) {
  SoftmaxPolicy p(c, d, tau);
  Rng rng(seed);
  for (auto& w : p.weights.data) w = scale * rng.normal();
  return p;
}

std::vector<LabEpisode> random_batch(std::size_t n, std::size_t c, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabEpisode> v(n);
  for (auto& e : v) {
    e.x.resize(d);
    for (auto& x : e.x) x = rng.normal();
    e.gold_class = static_cast<int>(rng.below(c));
  }
  return v;
}

double max_rel_inf(const Matrix& a, const Matrix& b) {
  double diff = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
  return diff / std::max(a.max_abs(), b.max_abs());
}

template <typename F>
Matrix finite_difference(SoftmaxPolicy& p, F loss, double h = 1e-5) {
  Matrix g(p.weights.rows, p.weights.cols);
  for (std::size_t i = 0; i < p.weights.data.size(); ++i) {
    const double w = p.weights.data[i];
    p.weights.data[i] = w + h;
    const double up = loss();
    p.weights.data[i] = w - h;
    const double down = loss();
    p.weights.data[i] = w;
    g.data[i] = (up - down) / (2 * h);
  }
  return g;
}

LabConfig tiny_config() {
  LabConfig c;
  c.task.n_train = 400;
  c.task.n_id_test = 300;
  c.task.n_ood_test = 300;
  c.warmup.steps = 50;
  c.steps = 10;
  c.n_seeds = 3;
  c.eval_every = 5;
  c.norm_window = 5;
  return c;
}

}  // namespace

TEST_CASE("softmax probabilities form a distribution") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = random_policy(7, 5, s, 3.0);
    const auto x = random_batch(1, 7, 5, s + 100)[0].x;
    const auto probs = policy_probs(p, x);
    CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double q : probs) CHECK(q >= 0.0);
  }
  const SoftmaxPolicy zero(4, 3);
  for (double q : policy_probs(zero, std::vector<double>{1, 2, 3})) CHECK(q == doctest::Approx(0.25));
  CHECK_THROWS_AS(policy_probs(zero, std::vector<double>{1, 2}), InvalidInput);
  CHECK_THROWS_AS(SoftmaxPolicy(1, 3), InvalidInput);
}

TEST_CASE("softmax survives huge logits") {
  auto p = random_policy(5, 3, 1, 1e4);
  const auto probs = policy_probs(p, std::vector<double>{1, 1, 1});
  for (double q : probs) CHECK(std::isfinite(q));
  CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("entropy grows with the temperature") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    auto p = random_policy(6, 4, s, 1.0);
    const auto x = random_batch(1, 6, 4, s + 7)[0].x;
    double prev = -1;
    for (double tau : {0.1, 0.3, 0.6, 0.9, 1.5, 3.0, 10.0}) {
      p.temperature = tau;
      const double h = entropy(policy_probs(p, x));
      CHECK(h >= prev - 1e-12);
      CHECK(h <= std::log(6.0) + 1e-12);
      prev = h;
    }
  }
}

TEST_CASE("greedy ties go to the lowest index") {
  const SoftmaxPolicy zero(4, 2);
  CHECK(greedy_class(zero, std::vector<double>{0.3, -1}) == 0);
}

TEST_CASE("SFT gradient of one episode at zero weights") {
  const SoftmaxPolicy p(10, 2, 0.9);
  const std::vector<LabEpisode> batch{{{1.0, 0.0}, 3, false, false}};
  const auto g = sft_gradient(p, batch);
  // ||p - e_y|| = sqrt((C - 1) / C), ||[x; 1]|| = sqrt(2).
  CHECK(g.frobenius_norm() == doctest::Approx(std::sqrt(0.9) * std::sqrt(2.0) / 0.9).epsilon(1e-14));
  CHECK(g(3, 0) == doctest::Approx(-0.9 / 0.9));
  CHECK(g(0, 2) == doctest::Approx(0.1 / 0.9));
  CHECK(g(0, 1) == 0.0);
}

TEST_CASE("two-class gradient norm at zero weights") {
  const SoftmaxPolicy p(2, 3, 0.9);
  const std::vector<LabEpisode> batch{{{0.5, -1.0, 2.0}, 1, false, false}};
  const double aug = std::sqrt(0.25 + 1.0 + 4.0 + 1.0);
  CHECK(sft_gradient(p, batch).frobenius_norm() == doctest::Approx(0.5 * std::sqrt(2.0) * aug / 0.9).epsilon(1e-14));
}

TEST_CASE("SFT gradient matches finite differences") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto p = random_policy(5, 4, s);
    const auto batch = random_batch(30, 5, 4, s + 50);
    const auto analytic = sft_gradient(p, batch);
    const auto fd = finite_difference(p, [&] { return sft_loss(p, batch); });
    CHECK(max_rel_inf(analytic, fd) < 1e-6);
  }
}

TEST_CASE("SFT step descends and reports the norm") {
  auto p = random_policy(5, 4, 3);
  const auto batch = random_batch(50, 5, 4, 4);
  const double before = sft_loss(p, batch);
  const double norm = sft_gradient(p, batch).frobenius_norm();
  CHECK(sft_step(p, batch, 0.05) == doctest::Approx(norm));
  CHECK(sft_loss(p, batch) < before);
  CHECK_THROWS_AS(sft_step(p, std::span<const LabEpisode>{}, 0.1), InvalidInput);
}

TEST_CASE("grouped SFT step equals the plain step on the union") {
  auto a = random_policy(5, 4, 8);
  auto b = a;
  const auto batch = random_batch(90, 5, 4, 9);
  const std::span<const LabEpisode> all(batch);
  const std::vector<std::span<const LabEpisode>> groups{all.subspan(0, 20), all.subspan(20, 0), all.subspan(20)};
  const auto norms = sft_step_grouped(a, groups, 0.1, Backend::Serial);
  const double plain = sft_step(b, batch, 0.1, Backend::Serial);
  CHECK(norms.grad_norm == doctest::Approx(plain).epsilon(1e-12));
  CHECK(max_rel_inf(a.weights, b.weights) < 1e-12);
  CHECK(std::isnan(norms.group_norms[1]));
  const auto g0 = random_policy(5, 4, 8);
  CHECK(norms.group_norms[0] == doctest::Approx(sft_gradient(g0, groups[0]).frobenius_norm()));
}

TEST_CASE("GRPO gradient matches finite differences") {
  GrpoConfig cfg;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto init = random_policy(4, 3, s, 0.3);
    auto snaps = PolicySnapshots::from(init);
    snaps.reference = random_policy(4, 3, s + 1, 0.3);
    const auto batch = random_batch(20, 4, 3, s + 9);
    Rng rng(s);
    const auto draws = draw_groups(snaps.old, batch, cfg, rng);
    // Move the current policy a little so ratios differ from one.
    for (auto& w : snaps.current.weights.data) w += 0.02 * rng.normal();
    const auto analytic = grpo_gradient(snaps, batch, draws, cfg, Backend::Serial);
    const auto fd = finite_difference(snaps.current, [&] { return grpo_loss(snaps, batch, draws, cfg); }, 1e-6);
    CHECK(max_rel_inf(analytic, fd) < 1e-5);
  }
}

TEST_CASE("GRPO gradient at the old policy is the REINFORCE estimate") {
  GrpoConfig cfg;
  cfg.beta = 0;
  const auto init = random_policy(5, 3, 21);
  const auto snaps = PolicySnapshots::from(init);
  const auto batch = random_batch(40, 5, 3, 22);
  Rng rng(23);
  const auto draws = draw_groups(snaps.old, batch, cfg, rng);
  const auto got = grpo_gradient(snaps, batch, draws, cfg, Backend::Serial);

  Matrix want(5, 4);
  const auto g = static_cast<std::size_t>(cfg.g);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto p = policy_probs(init, batch[i].x);
    for (std::size_t k = 0; k < g; ++k) {
      const double a = draws.advantages[i * g + k];
      const std::size_t y = draws.classes[i * g + k];
      for (std::size_t c = 0; c < 5; ++c) {
        const double dlog = ((c == y) - p[c]) / 0.9;
        for (std::size_t j = 0; j < 3; ++j) want(c, j) -= a * dlog * batch[i].x[j] / (g * batch.size());
        want(c, 3) -= a * dlog / (g * batch.size());
      }
    }
  }
  CHECK(max_rel_inf(got, want) < 1e-12);
}

TEST_CASE("uniform reward groups contribute nothing") {
  GrpoConfig cfg;
  cfg.beta = 0;
  auto snaps = PolicySnapshots::from(random_policy(4, 3, 31));
  const auto batch = random_batch(10, 4, 3, 32);
  GroupDraws draws;
  draws.g = cfg.g;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto p = policy_probs(snaps.old, batch[i].x);
    for (int k = 0; k < cfg.g; ++k) {
      const std::size_t c = i % 2 ? static_cast<std::size_t>(batch[i].gold_class) : (batch[i].gold_class + 1u) % 4;
      draws.classes.push_back(c);
      draws.old_probs.push_back(p[c]);
      draws.rewards.push_back(i % 2 ? 1.0 : 0.0);
      draws.advantages.push_back(0.0);
    }
  }
  const auto g = grpo_gradient(snaps, batch, draws, cfg);
  CHECK(g.max_abs() == 0.0);
}

TEST_CASE("dropping zero-update groups rescales the mean gradient") {
  GrpoConfig cfg;
  cfg.beta = 0;
  const auto snaps = PolicySnapshots::from(random_policy(4, 3, 41, 1.0));
  const auto batch = random_batch(60, 4, 3, 42);
  Rng rng(43);
  const auto draws = draw_groups(snaps.old, batch, cfg, rng);
  const auto g = static_cast<std::size_t>(cfg.g);

  std::vector<LabEpisode> kept;
  GroupDraws kd;
  kd.g = cfg.g;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::span<const double> r(draws.rewards.data() + i * g, g);
    if (is_zero_update_group(r)) continue;
    kept.push_back(batch[i]);
    for (std::size_t k = 0; k < g; ++k) {
      kd.classes.push_back(draws.classes[i * g + k]);
      kd.old_probs.push_back(draws.old_probs[i * g + k]);
      kd.rewards.push_back(draws.rewards[i * g + k]);
      kd.advantages.push_back(draws.advantages[i * g + k]);
    }
  }
  REQUIRE(!kept.empty());
  REQUIRE(kept.size() < batch.size());
  auto full = grpo_gradient(snaps, batch, draws, cfg, Backend::Serial);
  const auto sub = grpo_gradient(snaps, kept, kd, cfg, Backend::Serial);
  full.scale(static_cast<double>(batch.size()) / static_cast<double>(kept.size()));
  CHECK(max_rel_inf(full, sub) < 1e-12);
}

TEST_CASE("a large KL weight holds the policy near the reference") {
  GrpoConfig cfg;
  cfg.beta = 100;
  auto snaps = PolicySnapshots::from(random_policy(5, 4, 51, 0.2));
  const auto batch = random_batch(200, 5, 4, 52);
  for (int t = 0; t < 50; ++t) grpo_step(snaps, batch, cfg, 0.001, 1000 + t);
  double kl = 0;
  for (const auto& e : batch)
    kl += kl_categorical(policy_probs(snaps.current, e.x), policy_probs(snaps.reference, e.x));
  CHECK(kl / batch.size() < 1e-3);
  CHECK(snaps.old == snaps.current);
}

TEST_CASE("GRPO stats and old-policy refresh") {
  GrpoConfig cfg;
  auto snaps = PolicySnapshots::from(random_policy(5, 4, 61));
  const auto batch = random_batch(50, 5, 4, 62);
  const auto r = grpo_step(snaps, batch, cfg, 0.1, 7);
  CHECK(r.stats.easy + r.stats.medium + r.stats.hard == 50);
  CHECK(snaps.old == snaps.current);
  CHECK_FALSE(snaps.current == snaps.reference);
}

TEST_CASE("uniform policy draws all-wrong groups at rate 0.9^8") {
  const SoftmaxPolicy p(10, 3);
  const std::vector<double> x{0.5, -1, 2};
  Rng rng(71);
  const int trials = 100000;
  int hard = 0;
  for (int t = 0; t < trials; ++t) {
    const auto ys = sample_responses_lab(p, x, 8, rng);
    hard += std::none_of(ys.begin(), ys.end(), [](std::size_t y) { return y == 4; });
  }
  CHECK(std::abs(static_cast<double>(hard) / trials - std::pow(0.9, 8)) < 0.01);
  CHECK_THROWS_AS(sample_responses_lab(p, x, 1, rng), InvalidInput);
  CHECK(sample_responses_lab(p, x, 8, 5) == sample_responses_lab(p, x, 8, 5));
}

TEST_CASE("evaluation") {
  const auto p = random_policy(5, 4, 81, 2.0);
  auto batch = random_batch(300, 5, 4, 82);
  const auto a = evaluate(p, batch);
  std::reverse(batch.begin(), batch.end());
  CHECK(evaluate(p, batch).value == a.value);
  CHECK_FALSE(a.empty);
  std::size_t hits = 0;
  for (const auto& e : batch) hits += greedy_class(p, e.x) == static_cast<std::size_t>(e.gold_class);
  CHECK(a.value == static_cast<double>(hits) / 300.0);
  const auto none = evaluate(p, std::span<const LabEpisode>{});
  CHECK(none.empty);
  CHECK(none.value == 0.0);
}

TEST_CASE("uniform policy scores chance accuracy") {
  const SoftmaxPolicy p(10, 16);
  const auto batch = random_batch(10000, 10, 16, 83);
  CHECK(std::abs(evaluate(p, batch).value - 0.1) < 0.02);
}

TEST_CASE("serial and parallel kernels agree") {
  const auto p = random_policy(10, 16, 91);
  const auto batch = random_batch(1000, 10, 16, 92);
  const auto s = sft_gradient(p, batch, Backend::Serial);
  const auto par = sft_gradient(p, batch, Backend::Parallel);
  CHECK(max_rel_inf(s, par) < 1e-12);
  CHECK(count_correct(p, batch, Backend::Serial) == count_correct(p, batch, Backend::Parallel));

  GrpoConfig cfg;
  auto snaps = PolicySnapshots::from(p);
  snaps.reference = random_policy(10, 16, 93);
  Rng rng(94);
  const auto draws = draw_groups(snaps.old, batch, cfg, rng);
  CHECK(max_rel_inf(grpo_gradient(snaps, batch, draws, cfg, Backend::Serial),
                    grpo_gradient(snaps, batch, draws, cfg, Backend::Parallel)) < 1e-12);
}

#ifdef _OPENMP
TEST_CASE("parallel kernel is bitwise stable across thread counts") {
  const auto p = random_policy(10, 16, 95);
  const auto batch = random_batch(1000, 10, 16, 96);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = sft_gradient(p, batch, Backend::Parallel);
  omp_set_num_threads(4);
  const auto four = sft_gradient(p, batch, Backend::Parallel);
  omp_set_num_threads(saved);
  CHECK(one == four);
}
#endif

TEST_CASE("task generator") {
  SyntheticTaskSpec spec;
  spec.seed = 5;
  const auto t = gen_task(spec);
  CHECK(t.train.size() == 2000);
  CHECK(t.ood_test.size() == static_cast<std::size_t>(spec.n_ood_test));
  for (std::size_t c = 0; c < 10; ++c) {
    double n = 0;
    for (double v : t.prototypes.row(c)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(spec.proto_scale));
  }
  double uu = 0, vv = 0, uv = 0;
  for (std::size_t j = 0; j < t.u.size(); ++j) {
    uu += t.u[j] * t.u[j];
    vv += t.v[j] * t.v[j];
    uv += t.u[j] * t.v[j];
  }
  CHECK(uu == doctest::Approx(1.0));
  CHECK(vv == doctest::Approx(1.0));
  CHECK(std::abs(uv) < 1e-12);
  std::size_t noised = 0, ambiguous = 0;
  for (const auto& e : t.train) {
    noised += e.is_noised;
    ambiguous += e.is_ambiguous;
  }
  CHECK(std::abs(noised / 2000.0 - 0.15) < 0.03);
  CHECK(std::abs(ambiguous / 2000.0 - spec.ambiguous_rate) < 0.05);
  for (const auto& e : t.id_test) CHECK_FALSE((e.is_noised || e.is_ambiguous));
  for (const auto& e : t.ood_test) CHECK_FALSE((e.is_noised || e.is_ambiguous));

  const auto again = gen_task(spec);
  CHECK(again.train[17].x == t.train[17].x);

  spec.label_noise_rate = 0.5;
  CHECK_THROWS_AS(spec.validate(), InvalidInput);
}

TEST_CASE("without rotation the OOD split matches the ID split") {
  SyntheticTaskSpec spec;
  spec.ood_rotation_angle = 0;
  spec.n_train = 2000;
  spec.n_id_test = 20000;
  spec.n_ood_test = 20000;
  spec.seed = 3;
  const auto t = gen_task(spec);
  SoftmaxPolicy p(10, 16);
  for (int s = 0; s < 200; ++s) sft_step(p, t.train, 0.2);
  const double id = evaluate(p, t.id_test).value, ood = evaluate(p, t.ood_test).value;
  CHECK(id > 0.3);
  CHECK(std::abs(id - ood) < 0.02);
}

TEST_CASE("experiment runs are deterministic") {
  auto cfg = tiny_config();
  cfg.arms = {default_arms()[3], default_arms()[6]};
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg, {Backend::Parallel, false});
  for (std::size_t i = 0; i < a.arms.size(); ++i) {
    CHECK(a.arms[i].final_ood() == b.arms[i].final_ood());
    CHECK(a.arms[i].final_id() == b.arms[i].final_id());
    for (std::size_t s = 0; s < a.arms[i].runs.size(); ++s) {
      const auto& ra = a.arms[i].runs[s];
      const auto& rb = b.arms[i].runs[s];
      CHECK(ra.seed == rb.seed);
      for (std::size_t t = 0; t < ra.steps.size(); ++t) CHECK(ra.steps[t].grad_norm == rb.steps[t].grad_norm);
    }
  }
  cfg.seed = 1;
  const auto c = run_experiment(cfg);
  CHECK(c.arms[0].final_ood() != a.arms[0].final_ood());
}

TEST_CASE("serial backend reproduces the parallel run") {
  auto cfg = tiny_config();
  cfg.arms = {default_arms()[3]};
  const auto a = run_experiment(cfg, {Backend::Parallel, true});
  const auto b = run_experiment(cfg, {Backend::Serial, true});
  for (std::size_t s = 0; s < a.arms[0].runs.size(); ++s)
    CHECK(std::abs(a.arms[0].runs[s].final_ood - b.arms[0].runs[s].final_ood) <= 1.0 / 300);
}

TEST_CASE("hard ratio zero trains exactly like SFT-EM") {
  auto cfg = tiny_config();
  ArmSpec em{"em", TrainerKind::Sft, CurationPlan::of(PlanVariant::SftEM), {}};
  ArmSpec r0{"r0", TrainerKind::Sft, CurationPlan::hard_ratio(0.0), {}};
  cfg.arms = {em, r0};
  const auto r = run_experiment(cfg);
  CHECK(r.arm("em").final_ood() == r.arm("r0").final_ood());
  CHECK(r.arm("em").final_id() == r.arm("r0").final_id());
}

TEST_CASE("balanced bucket arms train on equal sizes") {
  auto cfg = tiny_config();
  cfg.arms = {default_arms()[0], default_arms()[1], default_arms()[2]};
  const auto r = run_experiment(cfg);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& e = r.arms[0].runs[s];
    const auto& m = r.arms[1].runs[s];
    const auto& h = r.arms[2].runs[s];
    const auto n = std::min({e.bucket_sizes[0], e.bucket_sizes[1], e.bucket_sizes[2]});
    CHECK(e.train_counts[0] == n);
    CHECK(m.train_counts[1] == n);
    CHECK(h.train_counts[2] == n);
    CHECK(e.train_counts[1] + e.train_counts[2] == 0);
  }
}

TEST_CASE("sign test") {
  CHECK(sign_test_p(0, 20) == doctest::Approx(1.0));
  CHECK(sign_test_p(20, 20) == doctest::Approx(std::pow(0.5, 20)));
  CHECK(sign_test_p(15, 20) == doctest::Approx(21700.0 / 1048576.0));
  CHECK(sign_test_p(14, 20) > 0.05);
  CHECK(sign_test_p(15, 20) < 0.05);
  CHECK_THROWS_AS(sign_test_p(3, 2), InvalidInput);
}

TEST_CASE("lab config JSON round-trip") {
  LabConfig c;
  c.lr = 0.02;
  c.task.pull_lo = 0.55;
  c.grpo.std_kind = StdKind::Sample;
  c.arms = default_arms();
  c.arms[2].lr = 0.5;
  const auto j = lab_config_to_json(c);
  const auto back = lab_config_from_json(j);
  CHECK(lab_config_to_json(back) == j);
  CHECK(back.arms.size() == c.arms.size());
  CHECK(back.arms[2].lr == 0.5);
  CHECK(back.task.pull_lo == 0.55);

  CHECK_THROWS(lab_config_from_json(nlohmann::json{{"bogus", 1}}));
  CHECK_THROWS(lab_config_from_json(nlohmann::json{{"steps", -1}}));
}

TEST_CASE("sweep arm names") {
  LabConfig c;
  const auto arms = sweep_arms(c);
  REQUIRE(arms.size() == 4);
  CHECK(arms[0].name == "hard-ratio-0");
  CHECK(arms[1].name == "hard-ratio-0.05");
  CHECK(arms[3].plan.rho == 0.25);
}
