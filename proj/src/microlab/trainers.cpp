#include "dcsft/microlab/trainers.hpp"

#include <cmath>
#include <limits>

#include "dcsft/core_model.hpp"

namespace dcsft::lab {

namespace {

std::size_t total_size(EpisodeGroups groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

void apply_step(SoftmaxPolicy& policy, const Matrix& grad, double lr) { policy.weights.axpy(-lr, grad); }

// Mean gradient from per-group sums, plus the per-group mean norms.
std::pair<Matrix, StepNorms> combine(const std::vector<Matrix>& sums, EpisodeGroups groups, std::size_t n) {
  Matrix total(sums.front().rows, sums.front().cols);
  StepNorms norms;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    total.axpy(1.0, sums[i]);
    const auto ni = groups[i].size();
    norms.group_norms.push_back(ni == 0 ? std::numeric_limits<double>::quiet_NaN()
                                        : sums[i].frobenius_norm() / static_cast<double>(ni));
  }
  total.scale(1.0 / static_cast<double>(n));
  norms.grad_norm = total.frobenius_norm();
  return {std::move(total), std::move(norms)};
}

}  // namespace

// ---------------------------------------------------------------------------
// SFT

double sft_loss(const SoftmaxPolicy& policy, std::span<const LabEpisode> batch) {
  if (batch.empty()) throw InvalidInput("sft_loss: empty batch");
  std::vector<double> p(policy.classes());
  double nll = 0;
  for (const auto& ep : batch) {
    probs_into(policy, ep.x, p);
    nll -= std::log(p[static_cast<std::size_t>(ep.gold_class)]);
  }
  return nll / static_cast<double>(batch.size());
}

Matrix sft_gradient(const SoftmaxPolicy& policy, std::span<const LabEpisode> batch, Backend backend) {
  if (batch.empty()) throw InvalidInput("sft_gradient: empty batch");
  Matrix g = sft_gradient_sum(policy, batch, backend);
  g.scale(1.0 / static_cast<double>(batch.size()));
  return g;
}

double sft_step(SoftmaxPolicy& policy, std::span<const LabEpisode> batch, double lr, Backend backend) {
  const std::span<const LabEpisode> one[] = {batch};
  return sft_step_grouped(policy, one, lr, backend).grad_norm;
}

StepNorms sft_step_grouped(SoftmaxPolicy& policy, EpisodeGroups groups, double lr, Backend backend) {
  const std::size_t n = total_size(groups);
  if (n == 0) throw InvalidInput("sft_step: empty batch");
  std::vector<Matrix> sums;
  sums.reserve(groups.size());
  for (const auto& g : groups) sums.push_back(sft_gradient_sum(policy, g, backend));
  auto [grad, norms] = combine(sums, groups, n);
  apply_step(policy, grad, lr);
  return norms;
}

// ---------------------------------------------------------------------------
// Sampling and evaluation

std::size_t draw_class(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double cdf = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    cdf += probs[c];
    if (u < cdf) return c;
  }
  return probs.size() - 1;
}

std::vector<std::size_t> sample_responses_lab(const SoftmaxPolicy& policy, std::span<const double> x, int g,
                                              Rng& rng) {
  if (g < 2) throw InvalidInput("sample_responses_lab: g must be >= 2");
  const auto p = policy_probs(policy, x);
  std::vector<std::size_t> out(static_cast<std::size_t>(g));
  for (auto& c : out) c = draw_class(p, rng);
  return out;
}

std::vector<std::size_t> sample_responses_lab(const SoftmaxPolicy& policy, std::span<const double> x, int g,
                                              std::uint64_t seed) {
  Rng rng(seed);
  return sample_responses_lab(policy, x, g, rng);
}

Accuracy evaluate(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, Backend backend) {
  if (episodes.empty()) return {0.0, true};
  const auto correct = count_correct(policy, episodes, backend);
  return {static_cast<double>(correct) / static_cast<double>(episodes.size()), false};
}

// ---------------------------------------------------------------------------
// GRPO

void PolicySnapshots::validate() const {
  if (current.weights.rows != old.weights.rows || current.weights.cols != old.weights.cols ||
      current.weights.rows != reference.weights.rows || current.weights.cols != reference.weights.cols)
    throw InvalidInput("policy snapshots differ in shape");
  if (current.temperature != old.temperature || current.temperature != reference.temperature)
    throw InvalidInput("policy snapshots differ in temperature");
}

GroupDraws draw_groups(const SoftmaxPolicy& old, std::span<const LabEpisode> batch, const GrpoConfig& config,
                       Rng& rng) {
  config.validate();
  const auto g = static_cast<std::size_t>(config.g);
  GroupDraws out;
  out.g = config.g;
  out.classes.reserve(batch.size() * g);
  out.old_probs.reserve(batch.size() * g);
  out.rewards.reserve(batch.size() * g);
  out.advantages.reserve(batch.size() * g);
  std::vector<double> p(old.classes());
  std::vector<double> rewards(g);
  for (const auto& ep : batch) {
    probs_into(old, ep.x, p);
    for (std::size_t k = 0; k < g; ++k) {
      const auto c = draw_class(p, rng);
      out.classes.push_back(c);
      out.old_probs.push_back(p[c]);
      rewards[k] = reward_of(c == static_cast<std::size_t>(ep.gold_class));
    }
    out.rewards.insert(out.rewards.end(), rewards.begin(), rewards.end());
    const auto adv = group_advantages(rewards, config.delta, config.std_kind);
    out.advantages.insert(out.advantages.end(), adv.begin(), adv.end());
  }
  return out;
}

double grpo_loss(const PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GroupDraws& draws,
                 const GrpoConfig& config) {
  snaps.validate();
  if (batch.empty()) throw InvalidInput("grpo_loss: empty batch");
  if (draws.prompts() != batch.size()) throw InvalidInput("grpo_loss: draws do not match the batch");
  const auto g = static_cast<std::size_t>(draws.g);
  std::vector<PromptGroup> groups(batch.size());
  std::vector<double> p(snaps.current.classes()), q(snaps.current.classes());
  double kl = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    probs_into(snaps.current, batch[i].x, p);
    for (std::size_t k = 0; k < g; ++k) {
      const std::size_t idx = i * g + k;
      groups[i].push_back({{p[draws.classes[idx]] / draws.old_probs[idx]}, draws.advantages[idx]});
    }
    if (config.beta != 0) {
      probs_into(snaps.reference, batch[i].x, q);
      kl += kl_categorical(p, q);
    }
  }
  return -grpo_objective(groups, config) + config.beta * kl / static_cast<double>(batch.size());
}

Matrix grpo_gradient_sum(const PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GroupDraws& draws,
                         const GrpoConfig& config, Backend backend) {
  snaps.validate();
  if (draws.prompts() != batch.size()) throw InvalidInput("grpo_gradient: draws do not match the batch");
  const auto g = static_cast<std::size_t>(draws.g);
  const double inv_g = 1.0 / static_cast<double>(g);
  const SoftmaxPolicy& ref = snaps.reference;
  const double beta = config.beta;
  const double eps = config.epsilon;
  return accumulate_gradient(
      snaps.current, batch,
      [&](std::size_t i, const LabEpisode& ep, EpisodeScratch& s) {
        const auto& p = s.probs;
        auto& c = s.coef;
        // Surrogate: d/dz of -(1/G) sum_k f(r_k A_k) with d r_k / dz = r_k (e_{y_k} - p).
        double weight_sum = 0;
        std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t k = 0; k < g; ++k) {
          const std::size_t idx = i * g + k;
          const double a = draws.advantages[idx];
          if (a == 0) continue;
          const std::size_t y = draws.classes[idx];
          const double r = p[y] / draws.old_probs[idx];
          if (!clipped_term_active(r, a, eps)) continue;
          const double w = a * r * inv_g;
          c[y] -= w;
          weight_sum += w;
        }
        if (weight_sum != 0) {
          for (std::size_t j = 0; j < c.size(); ++j) c[j] += weight_sum * p[j];
        }
        if (beta != 0) {
          thread_local std::vector<double> q;
          q.resize(p.size());
          probs_into(ref, ep.x, q);
          double kl = 0;
          for (std::size_t j = 0; j < p.size(); ++j) kl += p[j] * (std::log(p[j]) - std::log(q[j]));
          for (std::size_t j = 0; j < p.size(); ++j)
            c[j] += beta * p[j] * (std::log(p[j]) - std::log(q[j]) - kl);
        }
      },
      backend);
}

Matrix grpo_gradient(const PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GroupDraws& draws,
                     const GrpoConfig& config, Backend backend) {
  if (batch.empty()) throw InvalidInput("grpo_gradient: empty batch");
  Matrix m = grpo_gradient_sum(snaps, batch, draws, config, backend);
  m.scale(1.0 / static_cast<double>(batch.size()));
  return m;
}

GrpoStepResult grpo_step(PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GrpoConfig& config,
                         double lr, std::uint64_t seed, Backend backend) {
  const std::span<const LabEpisode> one[] = {batch};
  return grpo_step_grouped(snaps, one, config, lr, seed, backend);
}

GrpoStepResult grpo_step_grouped(PolicySnapshots& snaps, EpisodeGroups groups, const GrpoConfig& config, double lr,
                                 std::uint64_t seed, Backend backend) {
  config.validate();
  snaps.validate();
  const std::size_t n = total_size(groups);
  if (n == 0) throw InvalidInput("grpo_step: empty batch");
  Rng rng(seed);
  GrpoStepResult result;
  std::vector<Matrix> sums;
  sums.reserve(groups.size());
  const auto g = static_cast<std::size_t>(config.g);
  for (const auto& group : groups) {
    const GroupDraws draws = draw_groups(snaps.old, group, config, rng);
    for (std::size_t i = 0; i < group.size(); ++i) {
      switch (classify_difficulty(std::span<const double>(draws.rewards).subspan(i * g, g))) {
        case DifficultyLabel::Easy: ++result.stats.easy; break;
        case DifficultyLabel::Medium: ++result.stats.medium; break;
        case DifficultyLabel::Hard: ++result.stats.hard; break;
      }
    }
    sums.push_back(grpo_gradient_sum(snaps, group, draws, config, backend));
  }
  auto [grad, norms] = combine(sums, groups, n);
  result.norms = std::move(norms);
  apply_step(snaps.current, grad, lr);
  snaps.old = snaps.current;
  return result;
}

}  // namespace dcsft::lab
