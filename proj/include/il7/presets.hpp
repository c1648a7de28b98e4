#pragma once

// Reference posterior means and SDs shipped as named parameter sets.

#include <string>
#include <string_view>
#include <vector>

#include "il7/covariates.hpp"
#include "il7/prior.hpp"

namespace il7 {

struct Preset {
  std::string name;
  std::string description;
  ModelSpec spec;
  PopulationParams pop;
  std::vector<double> theta_sd;  ///< posterior SDs on the estimation scale, layout order
  PriorSpec prior;               ///< priors on intercepts, flat elsewhere
  double loglik;                 ///< NaN when not available
  double penalized_loglik;
  double lcva;
};

std::vector<std::string> preset_names();
Preset load_preset(std::string_view name);
/// Parse a preset document; throws ParseError / ValidationError.
Preset parse_preset(std::string_view json_text);

/// Prior means for intercepts, 0 for betas and 0.3 for every SD.
PopulationParams default_init(ModelVariant variant, const PriorSpec& prior);
/// Intercept priors shared by every model variant.
PriorSpec intercept_prior(ModelVariant variant);

}  // namespace il7
