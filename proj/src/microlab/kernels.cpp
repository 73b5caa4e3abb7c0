#include "dcsft/microlab/kernels.hpp"

namespace dcsft::lab {

Matrix sft_gradient_sum(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, Backend backend) {
  return accumulate_gradient(
      policy, episodes,
      [](std::size_t, const LabEpisode& ep, EpisodeScratch& s) {
        s.coef = s.probs;
        s.coef[static_cast<std::size_t>(ep.gold_class)] -= 1.0;
      },
      backend);
}

std::size_t count_correct(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, Backend backend) {
  const auto n = static_cast<std::ptrdiff_t>(episodes.size());
  std::size_t correct = 0;
  if (backend == Backend::Serial) {
    for (const auto& ep : episodes) correct += greedy_class(policy, ep.x) == static_cast<std::size_t>(ep.gold_class);
    return correct;
  }
#pragma omp parallel for reduction(+ : correct) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& ep = episodes[static_cast<std::size_t>(i)];
    correct += greedy_class(policy, ep.x) == static_cast<std::size_t>(ep.gold_class);
  }
  return correct;
}

}  // namespace dcsft::lab
