#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "il7/error.hpp"
#include "il7/quadrature.hpp"

using namespace il7;

TEST(GaussHermite, KnownFivePointRule) {
  const auto& r = gauss_hermite(5);
  ASSERT_EQ(r.nodes.size(), 5u);
  EXPECT_NEAR(r.nodes[4], 2.0201828704560856, 1e-13);
  EXPECT_NEAR(r.nodes[3], 0.9585724646138185, 1e-13);
  EXPECT_NEAR(r.nodes[2], 0.0, 1e-15);
  EXPECT_NEAR(r.nodes[0], -r.nodes[4], 1e-15);
  EXPECT_NEAR(r.weights[2], 0.9453087204829419, 1e-13);
}

TEST(GaussHermite, MomentsExactUpToDegree2nMinus1) {
  for (int n : {1, 2, 3, 5, 9, 16, 30}) {
    const auto& r = gauss_hermite(n);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      double acc = 0.0, mag = 0.0;
      for (int i = 0; i < n; ++i) {
        const double term = r.weights[i] * std::pow(r.nodes[i], k);
        acc += term;
        mag += std::abs(term);
      }
      const double exact = k % 2 ? 0.0 : std::tgamma(0.5 * k + 0.5);
      EXPECT_NEAR(acc, exact, 1e-11 * std::max(1.0, mag)) << "n=" << n << " k=" << k;
    }
  }
}

TEST(GaussHermite, SortedPositiveWeightsAndCached) {
  const auto& a = gauss_hermite(9);
  EXPECT_TRUE(std::is_sorted(a.nodes.begin(), a.nodes.end()));
  for (double w : a.weights) EXPECT_GT(w, 0.0);
  EXPECT_EQ(&a, &gauss_hermite(9));
}

TEST(GaussHermite, RejectsBadOrders) {
  EXPECT_THROW(gauss_hermite(0), DomainError);
  EXPECT_THROW(gauss_hermite(65), DomainError);
}
