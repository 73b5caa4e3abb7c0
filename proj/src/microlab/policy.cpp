#include "dcsft/microlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcsft/core_model.hpp"

namespace dcsft::lab {

double Matrix::frobenius_norm() const {
  double s = 0;
  for (double v : data) s += v * v;
  return std::sqrt(s);
}

double Matrix::max_abs() const {
  double m = 0;
  for (double v : data) m = std::max(m, std::abs(v));
  return m;
}

void Matrix::axpy(double alpha, const Matrix& other) {
  if (other.rows != rows || other.cols != cols) throw InvalidInput("Matrix::axpy: shape mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += alpha * other.data[i];
}

void Matrix::scale(double alpha) {
  for (double& v : data) v *= alpha;
}

void Matrix::fill(double v) { std::fill(data.begin(), data.end(), v); }

SoftmaxPolicy::SoftmaxPolicy(std::size_t classes, std::size_t dim, double tau)
    : weights(classes, dim + 1), temperature(tau) {
  if (classes < 2) throw InvalidInput("a policy needs at least 2 classes");
  if (!(tau > 0)) throw InvalidInput("sampling temperature must be > 0");
}

void raw_logits(const SoftmaxPolicy& policy, std::span<const double> x, std::span<double> out) {
  const std::size_t d = policy.dim();
  for (std::size_t c = 0; c < policy.classes(); ++c) {
    const auto w = policy.weights.row(c);
    double z = w[d];
    for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
    out[c] = z;
  }
}

void probs_into(const SoftmaxPolicy& policy, std::span<const double> x, std::span<double> out) {
  raw_logits(policy, x, out);
  const double inv_tau = 1.0 / policy.temperature;
  double top = out[0];
  for (double z : out) top = std::max(top, z);
  double sum = 0;
  for (double& z : out) {
    z = std::exp((z - top) * inv_tau);
    sum += z;
  }
  for (double& z : out) z /= sum;
}

std::vector<double> policy_probs(const SoftmaxPolicy& policy, std::span<const double> x) {
  if (x.size() != policy.dim())
    throw InvalidInput("policy_probs: input has " + std::to_string(x.size()) + " features, policy expects " +
                       std::to_string(policy.dim()));
  std::vector<double> p(policy.classes());
  probs_into(policy, x, p);
  return p;
}

std::size_t greedy_class(const SoftmaxPolicy& policy, std::span<const double> x) {
  const std::size_t d = policy.dim();
  std::size_t best = 0;
  double best_z = 0;
  for (std::size_t c = 0; c < policy.classes(); ++c) {
    const auto w = policy.weights.row(c);
    double z = w[d];
    for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
    if (c == 0 || z > best_z) {
      best = c;
      best_z = z;
    }
  }
  return best;
}

double entropy(std::span<const double> p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace dcsft::lab
