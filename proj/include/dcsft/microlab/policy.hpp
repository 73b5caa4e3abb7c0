#pragma once

// Linear softmax policy over C classes: p = softmax(W [x; 1] / tau).

#include <cstddef>
#include <span>
#include <vector>

namespace dcsft::lab {

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  double frobenius_norm() const;
  double max_abs() const;
  /// this += alpha * other
  void axpy(double alpha, const Matrix& other);
  void scale(double alpha);
  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct SoftmaxPolicy {
  Matrix weights;  // C x (d + 1), last column is the bias
  double temperature = 0.9;

  SoftmaxPolicy() = default;
  SoftmaxPolicy(std::size_t classes, std::size_t dim, double tau = 0.9);

  std::size_t classes() const { return weights.rows; }
  std::size_t dim() const { return weights.cols == 0 ? 0 : weights.cols - 1; }

  friend bool operator==(const SoftmaxPolicy&, const SoftmaxPolicy&) = default;
};

/// Raw scores W [x; 1], before the temperature. No size checks.
void raw_logits(const SoftmaxPolicy& policy, std::span<const double> x, std::span<double> out);

/// Probabilities into `out` (size C). No size checks.
void probs_into(const SoftmaxPolicy& policy, std::span<const double> x, std::span<double> out);

/// Throws InvalidInput when |x| != d.
std::vector<double> policy_probs(const SoftmaxPolicy& policy, std::span<const double> x);

/// Greedy class; ties go to the lowest index.
std::size_t greedy_class(const SoftmaxPolicy& policy, std::span<const double> x);

double entropy(std::span<const double> p);

}  // namespace dcsft::lab
