#include "dcsft/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcsft/core_model.hpp"

namespace dcsft {

void GrpoConfig::validate() const {
  if (g < 2) throw InvalidInput("group size must be >= 2");
  if (!(epsilon > 0 && epsilon < 1)) throw InvalidInput("clip width must be in (0, 1)");
  if (!(beta >= 0) || !std::isfinite(beta)) throw InvalidInput("KL weight must be >= 0");
  if (!(delta > 0) || !std::isfinite(delta)) throw InvalidInput("delta must be > 0");
}

RewardGroup RewardGroup::compute(std::span<const double> rewards, double delta, StdKind kind) {
  if (rewards.size() < 2) throw InvalidInput("a reward group needs at least 2 rewards");
  if (!(delta > 0) || !std::isfinite(delta)) throw InvalidInput("delta must be > 0");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw InvalidInput("rewards must be finite");
  }
  const double n = static_cast<double>(rewards.size());
  // Shifted accumulation keeps the mean exact for uniform groups.
  const double r0 = rewards.front();
  double shift = 0;
  for (double r : rewards) shift += r - r0;
  const double mean = r0 + shift / n;

  double ss = 0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = kind == StdKind::Population ? n : n - 1;

  RewardGroup out;
  out.rewards.assign(rewards.begin(), rewards.end());
  out.mean = mean;
  out.std = std::sqrt(ss / denom);
  out.advantages.reserve(rewards.size());
  for (double r : rewards) out.advantages.push_back((r - mean) / (out.std + delta));
  return out;
}

std::vector<double> group_advantages(std::span<const double> rewards, double delta, StdKind kind) {
  return RewardGroup::compute(rewards, delta, kind).advantages;
}

double clipped_term(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1 - epsilon, 1 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

bool clipped_term_active(double ratio, double advantage, double epsilon) {
  if (ratio >= 1 - epsilon && ratio <= 1 + epsilon) return true;
  const double clipped = std::clamp(ratio, 1 - epsilon, 1 + epsilon);
  return ratio * advantage <= clipped * advantage;
}

double grpo_objective(std::span<const PromptGroup> groups, const GrpoConfig& config) {
  if (groups.empty()) throw InvalidInput("grpo_objective: no prompt groups");
  double total = 0;
  for (const auto& group : groups) {
    if (group.empty()) throw InvalidInput("grpo_objective: empty response group");
    double group_sum = 0;
    for (const auto& response : group) {
      if (response.token_ratios.empty()) throw InvalidInput("grpo_objective: response with no tokens");
      double token_sum = 0;
      for (double r : response.token_ratios) token_sum += clipped_term(r, response.advantage, config.epsilon);
      group_sum += token_sum / static_cast<double>(response.token_ratios.size());
    }
    total += group_sum / static_cast<double>(group.size());
  }
  return total / static_cast<double>(groups.size());
}

double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw InvalidInput("kl_categorical: supports differ in size (" + std::to_string(p.size()) + " vs " +
                       std::to_string(q.size()) + ")");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (!(q[i] > 0)) throw InvalidInput("kl_categorical: q is zero where p is positive");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

bool is_zero_update_group(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InvalidInput("a reward group needs at least 2 rewards");
  return std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); });
}

}  // namespace dcsft
