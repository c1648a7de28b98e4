#pragma once

#include <array>
#include <vector>

#include "il7/estimation.hpp"

namespace il7 {

/// Marginal log-likelihoods of a cohort as an Objective. Random-effect modes
/// found at the anchor seed the inner searches of every later evaluation.
class CohortObjective final : public Objective {
 public:
  CohortObjective(const std::vector<PatientRecord>& cohort, ModelSpec spec, LikelihoodOptions options = {});

  std::size_t dimension() const override;
  std::size_t units() const override { return cohort_.size(); }
  std::vector<double> unit_logliks(const std::vector<double>& theta) const override;
  void set_anchor(const std::vector<double>& theta) override;

  const ModelSpec& spec() const noexcept { return spec_; }

 private:
  const std::vector<PatientRecord>& cohort_;
  ModelSpec spec_;
  LikelihoodOptions options_;
  std::vector<std::optional<std::array<double, 2>>> anchors_;
};

}  // namespace il7
