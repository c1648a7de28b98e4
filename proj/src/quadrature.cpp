#include "il7/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "il7/error.hpp"

namespace il7 {
namespace {

/// Orthonormal Hermite polynomials p_{n-1}(x), p_n(x) and sum_{k<n} p_k(x)^2.
void hermite_values(int n, double x, double& prev, double& cur, double& christoffel) {
  double pm1 = 0.0;
  double p = std::pow(std::numbers::pi, -0.25);
  christoffel = 0.0;
  for (int k = 0; k < n; ++k) {
    christoffel += p * p;
    const double next = std::sqrt(2.0 / (k + 1)) * x * p - std::sqrt(static_cast<double>(k) / (k + 1)) * pm1;
    pm1 = p;
    p = next;
  }
  prev = pm1;
  cur = p;
}

GaussHermiteRule compute_rule(int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    J(k, k - 1) = J(k - 1, k) = std::sqrt(0.5 * k);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mass = std::sqrt(std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = mass * v0 * v0;
  }
  // Newton polish of the nodes; weights from the Christoffel function keep
  // their relative accuracy in the tails.
  for (int i = 0; i < n; ++i) {
    double x = rule.nodes[i], prev = 0.0, cur = 0.0, ch = 0.0;
    for (int it = 0; it < 3; ++it) {
      hermite_values(n, x, prev, cur, ch);
      x -= cur / (std::sqrt(2.0 * n) * prev);
    }
    hermite_values(n, x, prev, cur, ch);
    rule.nodes[i] = x;
    rule.weights[i] = 1.0 / ch;
  }
  // Exact symmetry.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int n) {
  if (n < 1 || n > 64) throw DomainError("Gauss-Hermite order must be in [1, 64]");
  static std::mutex mu;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute_rule(n)).first;
  return it->second;
}

}  // namespace il7
