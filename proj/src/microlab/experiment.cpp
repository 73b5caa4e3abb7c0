#include "dcsft/microlab/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <unordered_map>

#include "dcsft/rng.hpp"

namespace dcsft::lab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t bucket_index(DifficultyLabel l) {
  switch (l) {
    case DifficultyLabel::Easy: return 0;
    case DifficultyLabel::Medium: return 1;
    case DifficultyLabel::Hard: return 2;
  }
  return 2;
}

std::string episode_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep-%05zu", i);
  return buf;
}

// Everything an arm needs that is shared across arms of the same seed.
struct SeedContext {
  int index = 0;
  std::uint64_t seed = 0;
  LabTask task;
  std::vector<LabEpisode> train;  // warm-up split removed
  SoftmaxPolicy warm;
  std::vector<VerifiedResponseSet> verified;
  std::unordered_map<std::string, std::size_t> index_of;
  std::array<std::size_t, 3> bucket_sizes{};
  double warm_id = 0;
  double warm_ood = 0;
};

SeedContext prepare_seed(const LabConfig& config, int index, Backend backend) {
  SeedContext ctx;
  ctx.index = index;
  ctx.seed = derive_seed(config.seed, static_cast<std::uint64_t>(index));

  SyntheticTaskSpec spec = config.task;
  spec.seed = derive_seed(ctx.seed, "task");
  ctx.task = gen_task(spec);

  // Held-out warm-up split, excluded from everything after.
  const std::size_t n = ctx.task.train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng split(derive_seed(ctx.seed, "warmup-split"));
  split.shuffle(order);
  const auto n_warm = static_cast<std::size_t>(std::floor(config.warmup.fraction * static_cast<double>(n)));
  std::vector<LabEpisode> warm_set;
  warm_set.reserve(n_warm);
  for (std::size_t i = 0; i < n_warm; ++i) warm_set.push_back(ctx.task.train[order[i]]);
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_warm), order.end());
  for (std::size_t i = n_warm; i < n; ++i) ctx.train.push_back(ctx.task.train[order[i]]);

  ctx.warm = SoftmaxPolicy(static_cast<std::size_t>(spec.classes), static_cast<std::size_t>(spec.d),
                           config.temperature);
  if (!warm_set.empty()) {
    for (int t = 0; t < config.warmup.steps; ++t) sft_step(ctx.warm, warm_set, config.warmup.lr, backend);
  }
  ctx.warm_id = evaluate(ctx.warm, ctx.task.id_test, backend).value;
  ctx.warm_ood = evaluate(ctx.warm, ctx.task.ood_test, backend).value;

  // Difficulty from g draws of the warm policy.
  Rng bucket_rng(derive_seed(ctx.seed, "bucketing"));
  SamplingParams params;
  params.g = config.bucket_g;
  params.temperature = config.temperature;
  params.model_id = "microlab-warm";
  ctx.verified.reserve(ctx.train.size());
  for (std::size_t i = 0; i < ctx.train.size(); ++i) {
    const auto& ep = ctx.train[i];
    const auto draws = sample_responses_lab(ctx.warm, ep.x, config.bucket_g, bucket_rng);
    std::vector<std::string> responses;
    std::vector<double> rewards;
    for (auto c : draws) {
      responses.push_back(std::to_string(c));
      rewards.push_back(reward_of(c == static_cast<std::size_t>(ep.gold_class)));
    }
    auto v = VerifiedResponseSet::from_rewards(episode_id(i), std::move(responses), std::move(rewards), params);
    ++ctx.bucket_sizes[bucket_index(v.difficulty)];
    ctx.index_of.emplace(v.sample_id, i);
    ctx.verified.push_back(std::move(v));
  }
  return ctx;
}

SeedRun run_arm(const LabConfig& config, const SeedContext& ctx, const ArmSpec& arm, double lr, Backend backend) {
  SeedRun run;
  run.seed_index = ctx.index;
  run.seed = ctx.seed;
  run.bucket_sizes = ctx.bucket_sizes;
  run.warm_id = ctx.warm_id;
  run.warm_ood = ctx.warm_ood;

  CurationPlan plan = arm.plan;
  plan.seed = derive_seed(ctx.seed, "curation");
  const CuratedSet curated = build_curated_set(ctx.verified, plan);
  run.achieved_hard_ratio = curated.manifest.achieved_hard_ratio();

  std::array<std::vector<LabEpisode>, 3> grouped;
  for (const auto& id : curated.ids) {
    const std::size_t i = ctx.index_of.at(id);
    grouped[bucket_index(ctx.verified[i].difficulty)].push_back(ctx.train[i]);
  }
  for (std::size_t b = 0; b < 3; ++b) run.train_counts[b] = grouped[b].size();
  if (curated.ids.empty()) throw InvalidInput("arm " + arm.name + ": curated training set is empty");
  const std::array<std::span<const LabEpisode>, 3> groups{grouped[0], grouped[1], grouped[2]};

  SoftmaxPolicy policy = ctx.warm;
  PolicySnapshots snaps = PolicySnapshots::from(ctx.warm);
  const std::uint64_t grpo_seed = derive_seed(ctx.seed, "grpo");

  run.steps.reserve(static_cast<std::size_t>(config.steps));
  double window_sum = 0;
  for (int t = 0; t < config.steps; ++t) {
    StepLog log;
    log.step = t;
    StepNorms norms;
    if (arm.trainer == TrainerKind::Sft) {
      norms = sft_step_grouped(policy, groups, lr, backend);
    } else {
      auto r = grpo_step_grouped(snaps, groups, config.grpo, lr, derive_seed(grpo_seed, static_cast<std::uint64_t>(t)),
                                 backend);
      norms = std::move(r.norms);
      run.grpo_totals.easy += r.stats.easy;
      run.grpo_totals.medium += r.stats.medium;
      run.grpo_totals.hard += r.stats.hard;
    }
    const SoftmaxPolicy& now = arm.trainer == TrainerKind::Sft ? policy : snaps.current;
    log.grad_norm = norms.grad_norm;
    for (std::size_t b = 0; b < 3; ++b) log.bucket_norms[b] = norms.group_norms[b];

    window_sum += log.grad_norm;
    if (t >= config.smoothing_window) window_sum -= run.steps[static_cast<std::size_t>(t - config.smoothing_window)].grad_norm;
    log.grad_norm_smoothed = window_sum / static_cast<double>(std::min(t + 1, config.smoothing_window));

    const bool last = t + 1 == config.steps;
    if (last || (t + 1) % config.eval_every == 0) {
      log.id_acc = evaluate(now, ctx.task.id_test, backend).value;
      log.ood_acc = evaluate(now, ctx.task.ood_test, backend).value;
    } else {
      log.id_acc = kNaN;
      log.ood_acc = kNaN;
    }
    run.steps.push_back(log);
  }
  if (config.steps == 0) {
    run.final_id = ctx.warm_id;
    run.final_ood = ctx.warm_ood;
  } else {
    run.final_id = run.steps.back().id_acc;
    run.final_ood = run.steps.back().ood_acc;
  }
  return run;
}

}  // namespace

double SeedRun::mean_grad_norm(int window, int bucket) const {
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(window, 0)), steps.size());
  if (n == 0) return kNaN;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    s += bucket < 0 ? steps[i].grad_norm : steps[i].bucket_norms[static_cast<std::size_t>(bucket)];
  return s / static_cast<double>(n);
}

std::vector<double> ArmReport::final_ood() const {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.final_ood);
  return out;
}

std::vector<double> ArmReport::final_id() const {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.final_id);
  return out;
}

const ArmReport& ExperimentResult::arm(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.arm.name == name) return a;
  }
  throw InvalidInput("no arm named " + name);
}

ExperimentResult run_experiment(const LabConfig& config, const RunOptions& options) {
  config.validate();
  ExperimentResult result;
  result.config = config;
  const std::vector<ArmSpec> arms = config.arms.empty() ? default_arms() : config.arms;
  result.config.arms = arms;
  for (const auto& arm : arms) {
    ArmReport rep;
    rep.arm = arm;
    rep.lr = arm.lr.value_or(arm.trainer == TrainerKind::Grpo ? config.grpo_lr : config.lr);
    rep.runs.resize(static_cast<std::size_t>(config.n_seeds));
    result.arms.push_back(std::move(rep));
  }

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.n_seeds));
  auto one_seed = [&](int s) {
    try {
      const SeedContext ctx = prepare_seed(config, s, options.backend);
      for (auto& rep : result.arms)
        rep.runs[static_cast<std::size_t>(s)] = run_arm(config, ctx, rep.arm, rep.lr, options.backend);
    } catch (...) {
      errors[static_cast<std::size_t>(s)] = std::current_exception();
    }
  };
  if (options.parallel_seeds) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int s = 0; s < config.n_seeds; ++s) one_seed(s);
  } else {
    for (int s = 0; s < config.n_seeds; ++s) one_seed(s);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return result;
}

}  // namespace dcsft::lab
