#pragma once

#include <cstddef>
#include <vector>

namespace il7 {

/// Independent Gaussian priors on the estimation-scale parameter vector. An
/// infinite SD is a flat prior and contributes nothing.
struct PriorSpec {
  std::vector<double> mean;
  std::vector<double> sd;

  static PriorSpec flat(std::size_t n);

  std::size_t size() const noexcept { return mean.size(); }
  bool penalized(std::size_t i) const;
  /// Exact log density, normalizing constants included.
  double log_density(const std::vector<double>& theta) const;
  std::vector<double> gradient(const std::vector<double>& theta) const;
  /// 1/sd^2, zero for flat coordinates.
  std::vector<double> precision() const;
  void validate(std::size_t n) const;
};

}  // namespace il7
