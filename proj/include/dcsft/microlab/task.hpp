#pragma once

// Synthetic classification task with an in-distribution test set and an
// out-of-distribution test set rotated in a random 2-plane.

#include <cstdint>
#include <vector>

#include "dcsft/microlab/policy.hpp"

namespace dcsft::lab {

struct SyntheticTaskSpec {
  int d = 16;
  int classes = 10;
  int n_train = 2000;
  int n_id_test = 10000;
  int n_ood_test = 10000;
  double proto_scale = 3.0;
  double noise_sigma = 0.5;
  double ood_rotation_angle = 0.5;
  double label_noise_rate = 0.15;
  // Low-margin placement: an ambiguous episode sits a fraction `pull` of the
  // way toward a confuser class in the robust subspace while its rotation-plane
  // component carries a scaled copy of its own prototype (the nuisance cue).
  // Only the train split gets ambiguous episodes; test sets stay clean.
  double ambiguous_rate = 0.3;
  double pull_lo = 0.6;
  double pull_hi = 0.8;
  double nuisance_cue = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabEpisode {
  std::vector<double> x;
  int gold_class = 0;
  bool is_noised = false;
  bool is_ambiguous = false;
};

struct LabTask {
  std::vector<LabEpisode> train;
  std::vector<LabEpisode> id_test;
  std::vector<LabEpisode> ood_test;
  Matrix prototypes;      // C x d
  std::vector<double> u;  // orthonormal basis of the rotation plane
  std::vector<double> v;
};

LabTask gen_task(const SyntheticTaskSpec& spec);

}  // namespace dcsft::lab
