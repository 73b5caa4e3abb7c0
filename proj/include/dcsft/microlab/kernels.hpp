#pragma once

// Batch kernels. Every gradient in the lab has the form
//   sum_i c_i (x) [x_i; 1] / tau
// where c_i is a per-episode coefficient vector on the logits. The serial
// kernel accumulates in episode order; the parallel kernel sums fixed blocks
// of episodes independently and then adds the block partials in block order,
// so its result does not depend on the thread count.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "dcsft/microlab/policy.hpp"
#include "dcsft/microlab/task.hpp"

namespace dcsft::lab {

enum class Backend { Serial, Parallel };

inline constexpr std::size_t kKernelBlock = 64;

/// Per-episode scratch handed to coefficient functions.
struct EpisodeScratch {
  std::vector<double> probs;  // policy probabilities for the episode
  std::vector<double> coef;   // filled by the coefficient function
};

namespace detail {

inline void add_outer(Matrix& acc, std::span<const double> coef, std::span<const double> x, double inv_tau) {
  const std::size_t d = x.size();
  for (std::size_t c = 0; c < coef.size(); ++c) {
    const double a = coef[c] * inv_tau;
    if (a == 0) continue;
    auto row = acc.row(c);
    for (std::size_t j = 0; j < d; ++j) row[j] += a * x[j];
    row[d] += a;
  }
}

template <typename CoefFn>
void accumulate_range(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, std::size_t begin,
                      std::size_t end, CoefFn& coef_fn, Matrix& acc) {
  EpisodeScratch s{std::vector<double>(policy.classes()), std::vector<double>(policy.classes())};
  const double inv_tau = 1.0 / policy.temperature;
  for (std::size_t i = begin; i < end; ++i) {
    probs_into(policy, episodes[i].x, s.probs);
    coef_fn(i, episodes[i], s);
    add_outer(acc, s.coef, episodes[i].x, inv_tau);
  }
}

}  // namespace detail

/// Sum over episodes of coef_fn(i, episode, scratch) (x) [x; 1] / tau.
/// coef_fn must write scratch.coef and may read scratch.probs; with the
/// parallel backend it is called concurrently and must be thread-safe.
template <typename CoefFn>
Matrix accumulate_gradient(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, CoefFn coef_fn,
                           Backend backend) {
  Matrix total(policy.weights.rows, policy.weights.cols);
  if (backend == Backend::Serial) {
    detail::accumulate_range(policy, episodes, 0, episodes.size(), coef_fn, total);
    return total;
  }
  const std::size_t blocks = (episodes.size() + kKernelBlock - 1) / kKernelBlock;
  std::vector<Matrix> partial(blocks, Matrix(policy.weights.rows, policy.weights.cols));
  const auto nb = static_cast<std::ptrdiff_t>(blocks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    const std::size_t begin = ub * kKernelBlock;
    const std::size_t end = std::min(begin + kKernelBlock, episodes.size());
    detail::accumulate_range(policy, episodes, begin, end, coef_fn, partial[ub]);
  }
  for (const auto& p : partial) total.axpy(1.0, p);
  return total;
}

/// Sum over episodes of (p - onehot(gold)) (x) [x; 1] / tau.
Matrix sft_gradient_sum(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, Backend backend);

/// Number of episodes whose greedy class equals the gold class.
std::size_t count_correct(const SoftmaxPolicy& policy, std::span<const LabEpisode> episodes, Backend backend);

}  // namespace dcsft::lab
