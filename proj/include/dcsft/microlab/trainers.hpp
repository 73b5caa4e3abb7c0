#pragma once

// SFT and GRPO trainers for the softmax policy, with analytic gradients.

#include <cstdint>
#include <span>
#include <vector>

#include "dcsft/grpo.hpp"
#include "dcsft/microlab/kernels.hpp"
#include "dcsft/microlab/policy.hpp"
#include "dcsft/microlab/task.hpp"
#include "dcsft/rng.hpp"

namespace dcsft::lab {

using EpisodeGroups = std::span<const std::span<const LabEpisode>>;

// ---------------------------------------------------------------------------
// SFT

/// Mean negative log-likelihood of the gold classes.
double sft_loss(const SoftmaxPolicy& policy, std::span<const LabEpisode> batch);

/// Gradient of sft_loss with respect to the weights.
Matrix sft_gradient(const SoftmaxPolicy& policy, std::span<const LabEpisode> batch,
                    Backend backend = Backend::Parallel);

struct StepNorms {
  double grad_norm = 0;
  /// Norm of each group's own mean gradient; NaN for an empty group.
  std::vector<double> group_norms;
};

/// One gradient-descent step on the mean NLL; returns the gradient norm.
/// Throws InvalidInput on an empty batch.
double sft_step(SoftmaxPolicy& policy, std::span<const LabEpisode> batch, double lr,
                Backend backend = Backend::Parallel);

/// Same step over the union of the groups, also reporting per-group norms.
StepNorms sft_step_grouped(SoftmaxPolicy& policy, EpisodeGroups groups, double lr,
                           Backend backend = Backend::Parallel);

// ---------------------------------------------------------------------------
// Sampling and evaluation

std::size_t draw_class(std::span<const double> probs, Rng& rng);

/// g independent class draws from the policy. Throws InvalidInput if g < 2.
std::vector<std::size_t> sample_responses_lab(const SoftmaxPolicy& policy, std::span<const double> x, int g,
                                              Rng& rng);
std::vector<std::size_t> sample_responses_lab(const SoftmaxPolicy& policy, std::span<const double> x, int g,
                                              std::uint64_t seed);

struct Accuracy {
  double value = 0;
  bool empty = false;  // value is 0 by convention
};

Accuracy evaluate(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes,
                  Backend backend = Backend::Parallel);

// ---------------------------------------------------------------------------
// GRPO

struct PolicySnapshots {
  SoftmaxPolicy current;
  SoftmaxPolicy old;
  SoftmaxPolicy reference;

  /// All three start as copies of `init`.
  static PolicySnapshots from(const SoftmaxPolicy& init) { return {init, init, init}; }
  void validate() const;
};

/// Responses drawn from the old policy for a batch of prompts, row-major n x g.
struct GroupDraws {
  int g = 0;
  std::vector<std::size_t> classes;
  std::vector<double> old_probs;  // pi_old(y^k | x)
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t prompts() const { return g == 0 ? 0 : classes.size() / static_cast<std::size_t>(g); }
};

GroupDraws draw_groups(const SoftmaxPolicy& old, std::span<const LabEpisode> batch, const GrpoConfig& config,
                       Rng& rng);

/// -objective + beta * mean KL(current || reference) for fixed draws.
double grpo_loss(const PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GroupDraws& draws,
                 const GrpoConfig& config);

/// Gradient of grpo_loss with respect to the current weights.
Matrix grpo_gradient(const PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GroupDraws& draws,
                     const GrpoConfig& config, Backend backend = Backend::Parallel);

/// Same gradient without the 1/n prompt average.
Matrix grpo_gradient_sum(const PolicySnapshots& snaps, std::span<const LabEpisode> batch,
                         const GroupDraws& draws, const GrpoConfig& config, Backend backend);

/// Groups by the difficulty of their drawn rewards. Easy and hard groups are
/// the zero-update ones.
struct GrpoStats {
  std::size_t easy = 0;
  std::size_t medium = 0;
  std::size_t hard = 0;

  std::size_t zero_update() const { return easy + hard; }
};

struct GrpoStepResult {
  StepNorms norms;
  GrpoStats stats;
};

/// Draws from the old policy, steps the current policy on the loss, then
/// refreshes the old policy to the current one.
GrpoStepResult grpo_step(PolicySnapshots& snaps, std::span<const LabEpisode> batch, const GrpoConfig& config,
                         double lr, std::uint64_t seed, Backend backend = Backend::Parallel);

GrpoStepResult grpo_step_grouped(PolicySnapshots& snaps, EpisodeGroups groups, const GrpoConfig& config, double lr,
                                 std::uint64_t seed, Backend backend = Backend::Parallel);

}  // namespace dcsft::lab
