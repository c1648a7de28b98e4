#pragma once

#include <vector>

namespace il7 {

/// Gauss-Hermite rule for the weight exp(-x^2).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point rule by the Golub-Welsch eigenvalue method. Cached per n.
const GaussHermiteRule& gauss_hermite(int n);

}  // namespace il7
