#include "dcsft/microlab/task.hpp"

#include <cmath>

#include "dcsft/core_model.hpp"
#include "dcsft/rng.hpp"

namespace dcsft::lab {

void SyntheticTaskSpec::validate() const {
  if (d < 2) throw InvalidInput("feature dimension must be >= 2");
  if (classes < 2) throw InvalidInput("class count must be >= 2");
  if (n_train < 0 || n_id_test < 0 || n_ood_test < 0) throw InvalidInput("episode counts must be >= 0");
  if (!(proto_scale > 0)) throw InvalidInput("proto_scale must be > 0");
  if (!(noise_sigma >= 0)) throw InvalidInput("noise_sigma must be >= 0");
  if (!std::isfinite(ood_rotation_angle)) throw InvalidInput("rotation angle must be finite");
  if (!(label_noise_rate >= 0 && label_noise_rate < 0.5)) throw InvalidInput("label noise rate must be in [0, 0.5)");
  if (!(ambiguous_rate >= 0 && ambiguous_rate <= 1)) throw InvalidInput("ambiguous rate must be in [0, 1]");
  if (!(pull_lo >= 0 && pull_lo <= pull_hi && pull_hi <= 1)) throw InvalidInput("pull range must satisfy 0 <= lo <= hi <= 1");
  if (!(nuisance_cue >= 0)) throw InvalidInput("nuisance cue must be >= 0");
}

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec random_unit(Rng& rng, int d) {
  Vec v(static_cast<std::size_t>(d));
  double n = 0;
  do {
    for (double& x : v) x = rng.normal();
    n = std::sqrt(dot(v, v));
  } while (n == 0);
  for (double& x : v) x /= n;
  return v;
}

struct Geometry {
  const SyntheticTaskSpec& spec;
  Matrix protos;
  Vec u, v;
  double cos_a, sin_a;

  Vec proto(int c) const {
    auto r = protos.row(static_cast<std::size_t>(c));
    return Vec(r.begin(), r.end());
  }

  // Projection onto the rotation plane.
  Vec plane_part(const Vec& x) const {
    const double a = dot(x, u), b = dot(x, v);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * u[i] + b * v[i];
    return out;
  }

  Vec rotate(const Vec& x) const {
    const double a = dot(x, u), b = dot(x, v);
    const double ra = cos_a * a - sin_a * b;
    const double rb = sin_a * a + cos_a * b;
    Vec out = x;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += (ra - a) * u[i] + (rb - b) * v[i];
    return out;
  }

  std::vector<LabEpisode> draw(Rng& rng, int n, bool ambiguous, bool rotated) const {
    std::vector<LabEpisode> out(static_cast<std::size_t>(n));
    for (auto& ep : out) {
      ep.gold_class = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes)));
      Vec center = proto(ep.gold_class);
      if (ambiguous && spec.ambiguous_rate > 0 && rng.uniform() < spec.ambiguous_rate) {
        ep.is_ambiguous = true;
        const int other = (ep.gold_class + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes - 1)))) %
                          spec.classes;
        const double pull = rng.uniform(spec.pull_lo, spec.pull_hi);
        const Vec target = proto(other);
        Vec mix(center.size());
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = center[i] + pull * (target[i] - center[i]);
        const Vec mix_plane = plane_part(mix);
        const Vec own_plane = plane_part(center);
        for (std::size_t i = 0; i < mix.size(); ++i)
          center[i] = mix[i] - mix_plane[i] + spec.nuisance_cue * own_plane[i];
      }
      if (rotated) center = rotate(center);
      ep.x.resize(center.size());
      for (std::size_t i = 0; i < center.size(); ++i) ep.x[i] = center[i] + spec.noise_sigma * rng.normal();
    }
    return out;
  }
};

}  // namespace

LabTask gen_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  const auto d = static_cast<std::size_t>(spec.d);

  Rng geo(derive_seed(spec.seed, "geometry"));
  Matrix protos(static_cast<std::size_t>(spec.classes), d);
  for (std::size_t c = 0; c < protos.rows; ++c) {
    const Vec dir = random_unit(geo, spec.d);
    for (std::size_t j = 0; j < d; ++j) protos(c, j) = spec.proto_scale * dir[j];
  }
  // Gram-Schmidt on two random directions.
  Vec u = random_unit(geo, spec.d);
  Vec v;
  for (;;) {
    v = random_unit(geo, spec.d);
    const double p = dot(u, v);
    for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
    const double n = std::sqrt(dot(v, v));
    if (n > 1e-6) {
      for (double& x : v) x /= n;
      break;
    }
  }

  Geometry g{spec, protos, u, v, std::cos(spec.ood_rotation_angle), std::sin(spec.ood_rotation_angle)};

  LabTask task;
  Rng train_rng(derive_seed(spec.seed, "train"));
  task.train = g.draw(train_rng, spec.n_train, true, false);
  Rng noise_rng(derive_seed(spec.seed, "label-noise"));
  for (auto& ep : task.train) {
    if (spec.label_noise_rate > 0 && noise_rng.uniform() < spec.label_noise_rate) {
      ep.gold_class = (ep.gold_class + 1 + static_cast<int>(noise_rng.below(static_cast<std::uint64_t>(spec.classes - 1)))) %
                      spec.classes;
      ep.is_noised = true;
    }
  }
  Rng id_rng(derive_seed(spec.seed, "id-test"));
  task.id_test = g.draw(id_rng, spec.n_id_test, false, false);
  Rng ood_rng(derive_seed(spec.seed, "ood-test"));
  task.ood_test = g.draw(ood_rng, spec.n_ood_test, false, true);

  task.prototypes = std::move(protos);
  task.u = std::move(u);
  task.v = std::move(v);
  return task;
}

}  // namespace dcsft::lab
