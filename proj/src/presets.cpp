#include "il7/presets.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "il7/error.hpp"
#include "json.hpp"

namespace il7 {
namespace detail {
const std::vector<std::pair<std::string_view, std::string_view>>& embedded_presets();
}

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double number_or_nan(const json& j, const char* key) {
  return j.contains(key) && j.at(key).is_number() ? j.at(key).get<double>() : kNaN;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : detail::embedded_presets()) out.emplace_back(name);
  return out;
}

Preset load_preset(std::string_view name) {
  for (const auto& [n, text] : detail::embedded_presets()) {
    if (n == name) return parse_preset(text);
  }
  throw ValidationError("unknown preset '" + std::string(name) + "'");
}

Preset parse_preset(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  Preset out;
  try {
    out.name = doc.at("name").get<std::string>();
    out.description = doc.value("description", "");
    out.spec.variant = parse_variant(doc.at("model").get<std::string>());
    if (doc.contains("feedback_nu")) out.spec.feedback = FeedbackSpec::with_exponent(doc.at("feedback_nu").get<double>());

    const auto layout = parameter_layout(out.spec.variant);
    const json& params = doc.at("parameters");
    std::vector<double> theta(layout.size()), sd(layout.size());
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const json& e = params.at(layout[i].name);
      const std::string scale = e.at("scale").get<std::string>();
      const double m = e.at("mean").get<double>();
      const double s = e.at("sd").get<double>();
      if (scale == "estimation" || layout[i].scale == ParamScale::Linear) {
        theta[i] = m;
        sd[i] = s;
      } else if (scale == "natural") {
        if (!(m > 0.0)) throw ValidationError(layout[i].name + ": natural-scale value must be positive");
        theta[i] = std::log(m);
        sd[i] = s / m;
      } else {
        throw ValidationError(layout[i].name + ": unknown scale '" + scale + "'");
      }
    }
    if (params.size() != layout.size()) throw ValidationError("preset has parameters not used by its model");
    out.pop = from_theta(theta, out.spec.variant);
    out.theta_sd = std::move(sd);

    out.prior = PriorSpec::flat(layout.size());
    if (doc.contains("prior")) {
      for (const auto& [key, val] : doc.at("prior").items()) {
        std::size_t i = 0;
        while (i < layout.size() && layout[i].name != key) ++i;
        if (i == layout.size()) throw ValidationError("prior on unknown parameter '" + key + "'");
        out.prior.mean[i] = val.at("mean").get<double>();
        out.prior.sd[i] = val.at("sd").get<double>();
      }
    }
    out.prior.validate(layout.size());

    const json fit = doc.value("fit", json::object());
    out.loglik = number_or_nan(fit, "loglik");
    out.penalized_loglik = number_or_nan(fit, "penalized_loglik");
    out.lcva = number_or_nan(fit, "lcva");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed preset: ") + e.what());
  }
  out.spec.validate();
  out.pop.validate(out.spec.variant);
  return out;
}

PriorSpec intercept_prior(ModelVariant variant) {
  const auto layout = parameter_layout(variant);
  PriorSpec p = PriorSpec::flat(layout.size());
  const std::map<std::string, std::pair<double, double>> table = {{"phi_lambda", {1.0, 1.0}},
                                                                  {"phi_rho", {0.0, 0.25}},
                                                                  {"phi_pi", {-4.0, 1.0}},
                                                                  {"phi_mu_q", {-3.6, 0.5}},
                                                                  {"phi_mu_p", {-2.5, 0.5}}};
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (auto it = table.find(layout[i].name); it != table.end()) {
      p.mean[i] = it->second.first;
      p.sd[i] = it->second.second;
    }
  }
  return p;
}

PopulationParams default_init(ModelVariant variant, const PriorSpec& prior) {
  const auto layout = parameter_layout(variant);
  prior.validate(layout.size());
  std::vector<double> theta(layout.size(), 0.0);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].intercept) {
      theta[i] = prior.mean[i];
    } else if (layout[i].name.rfind("sigma", 0) == 0) {
      theta[i] = std::log(0.3);
    }
  }
  return from_theta(theta, variant);
}

}  // namespace il7
