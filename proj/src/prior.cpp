#include "il7/prior.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "il7/error.hpp"

namespace il7 {

PriorSpec PriorSpec::flat(std::size_t n) {
  return {std::vector<double>(n, 0.0), std::vector<double>(n, std::numeric_limits<double>::infinity())};
}

bool PriorSpec::penalized(std::size_t i) const { return std::isfinite(sd.at(i)); }

void PriorSpec::validate(std::size_t n) const {
  if (mean.size() != n || sd.size() != n)
    throw ValidationError("prior has " + std::to_string(mean.size()) + " entries, model has " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sd[i] > 0.0)) throw ValidationError("prior SDs must be > 0");
    if (!std::isfinite(mean[i])) throw ValidationError("prior means must be finite");
  }
}

double PriorSpec::log_density(const std::vector<double>& theta) const {
  validate(theta.size());
  const double log_sqrt_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double acc = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!penalized(i)) continue;
    const double z = (theta[i] - mean[i]) / sd[i];
    acc += -0.5 * z * z - std::log(sd[i]) - log_sqrt_2pi;
  }
  return acc;
}

std::vector<double> PriorSpec::gradient(const std::vector<double>& theta) const {
  validate(theta.size());
  std::vector<double> g(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (penalized(i)) g[i] = -(theta[i] - mean[i]) / (sd[i] * sd[i]);
  }
  return g;
}

std::vector<double> PriorSpec::precision() const {
  std::vector<double> out(sd.size(), 0.0);
  for (std::size_t i = 0; i < sd.size(); ++i) {
    if (penalized(i)) out[i] = 1.0 / (sd[i] * sd[i]);
  }
  return out;
}

}  // namespace il7
