#pragma once

// Group-normalized advantages, the clipped surrogate, the categorical KL
// penalty and the zero-update predicate.

#include <span>
#include <vector>

namespace dcsft {

enum class StdKind { Population, Sample };

struct GrpoConfig {
  int g = 8;
  double epsilon = 0.2;
  double beta = 0.04;
  double delta = 1e-4;
  StdKind std_kind = StdKind::Population;

  void validate() const;
};

struct RewardGroup {
  std::vector<double> rewards;
  double mean = 0;
  double std = 0;
  std::vector<double> advantages;

  static RewardGroup compute(std::span<const double> rewards, double delta,
                             StdKind kind = StdKind::Population);
};

/// A^k = (r^k - mean) / (std + delta). Uniform groups give exact zeros.
/// Throws InvalidInput when g < 2, delta <= 0 or a reward is not finite.
std::vector<double> group_advantages(std::span<const double> rewards, double delta,
                                     StdKind kind = StdKind::Population);

/// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
double clipped_term(double ratio, double advantage, double epsilon);

/// True when the clipped term's derivative with respect to the ratio is A,
/// false when the clipped branch is active and the derivative is zero.
bool clipped_term_active(double ratio, double advantage, double epsilon);

struct ResponseRatios {
  std::vector<double> token_ratios;
  double advantage = 0;
};

using PromptGroup = std::vector<ResponseRatios>;

/// Mean over prompts of (1/G) sum_k (1/|y^k|) sum_t clipped_term(r_t^k, A^k).
double grpo_objective(std::span<const PromptGroup> groups, const GrpoConfig& config);

/// sum p log(p/q). Throws InvalidInput on a size mismatch or q = 0 where p > 0.
double kl_categorical(std::span<const double> p, std::span<const double> q);

/// True iff every reward is equal. Throws InvalidInput for fewer than 2.
bool is_zero_update_group(std::span<const double> rewards);

}  // namespace dcsft
