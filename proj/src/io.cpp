#include "il7/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

#include "il7/error.hpp"
#include "json.hpp"

namespace il7 {
namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_number(const std::string& s, std::size_t line, const char* field) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError(std::string("invalid ") + field + " '" + s + "'", line);
  return v;
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

/// Calls row(fields, line) for every non-empty data line after checking the header.
template <class F>
void read_table(std::istream& in, const std::vector<std::string>& header, F&& row) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (!have_header) {
      if (fields != header) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        throw ParseError("expected header '" + want + "'", lineno);
      }
      have_header = true;
      continue;
    }
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()),
                       lineno);
    if (fields[0].empty()) throw ParseError("empty patient_id", lineno);
    row(fields, lineno);
  }
  if (!have_header) throw ParseError("missing header", lineno == 0 ? 1 : lineno);
}

double natural(double est, ParamScale scale) { return scale == ParamScale::Log ? std::exp(est) : est; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::vector<RawObservation> read_observations(std::istream& in) {
  std::vector<RawObservation> out;
  read_table(in, {"patient_id", "time_days", "kind", "value"}, [&](const std::vector<std::string>& f, std::size_t ln) {
    RawObservation r;
    r.patient_id = f[0];
    r.obs.time = parse_number(f[1], ln, "time_days");
    const std::string kind = upper(f[2]);
    if (kind == "CD4") {
      r.obs.kind = ObsKind::Cd4;
    } else if (kind == "KI67") {
      r.obs.kind = ObsKind::Ki67;
    } else {
      throw ParseError("unknown kind '" + f[2] + "' (expected CD4 or KI67)", ln);
    }
    r.obs.value = parse_number(f[3], ln, "value");
    if (r.obs.value < 0.0) throw ParseError("negative count", ln);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<RawInjection> read_injections(std::istream& in) {
  std::vector<RawInjection> out;
  read_table(in, {"patient_id", "time_days", "dose_ug_per_kg"}, [&](const std::vector<std::string>& f, std::size_t ln) {
    RawInjection r;
    r.patient_id = f[0];
    r.time = parse_number(f[1], ln, "time_days");
    r.dose = parse_number(f[2], ln, "dose_ug_per_kg");
    if (!(r.dose > 0.0)) throw ParseError("dose must be > 0", ln);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<PatientRecord> assemble_cohort(const std::vector<RawObservation>& obs,
                                           const std::vector<RawInjection>& inj) {
  std::map<std::string, PatientRecord> byid;
  std::map<std::string, std::pair<std::vector<double>, double>> shots;
  for (const auto& r : inj) {
    auto& [times, dose] = shots[r.patient_id];
    if (!times.empty() && dose != r.dose)
      throw ValidationError("patient " + r.patient_id + ": every injection must have the same dose");
    times.push_back(r.time);
    dose = r.dose;
  }
  for (const auto& [id, sd] : shots) {
    PatientRecord& p = byid[id];
    p.id = id;
    try {
      p.schedule = InjectionSchedule::from_injection_times(sd.first, sd.second);
    } catch (const ValidationError& e) {
      throw ValidationError("patient " + id + ": " + e.what());
    }
  }
  for (const auto& r : obs) {
    PatientRecord& p = byid[r.patient_id];
    p.id = r.patient_id;
    p.observations.push_back(r.obs);
  }
  std::vector<PatientRecord> out;
  out.reserve(byid.size());
  for (auto& [_, p] : byid) out.push_back(std::move(p));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return ss.str();
}

std::vector<PatientRecord> read_cohort(const std::filesystem::path& observations,
                                       const std::filesystem::path& injections) {
  auto parse = [](const std::filesystem::path& path, auto reader) {
    std::istringstream in(read_file(path));
    try {
      return reader(in);
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), e.line());
    }
  };
  const auto obs = parse(observations, [](std::istream& in) { return read_observations(in); });
  const auto inj = parse(injections, [](std::istream& in) { return read_injections(in); });
  return assemble_cohort(obs, inj);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericalError("cannot format number");
  return std::string(buf, ptr);
}

std::string observations_csv(const std::vector<PatientRecord>& cohort) {
  std::string out = "patient_id,time_days,kind,value\n";
  for (const auto& p : cohort) {
    for (const auto& o : p.observations) {
      out += p.id + "," + format_double(o.time) + "," + (o.kind == ObsKind::Cd4 ? "CD4" : "KI67") + "," +
             format_double(o.value) + "\n";
    }
  }
  return out;
}

std::string injections_csv(const std::vector<PatientRecord>& cohort) {
  std::string out = "patient_id,time_days,dose_ug_per_kg\n";
  for (const auto& p : cohort) {
    for (double t : p.schedule.injection_times())
      out += p.id + "," + format_double(t) + "," + format_double(p.schedule.dose()) + "\n";
  }
  return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "protocol,n_injections,n_cycles,days_below_500,median_cd4\n";
  for (const auto& r : rows) {
    if (!r.report) continue;
    const auto& rep = *r.report;
    out += r.protocol + "," + std::to_string(rep.n_injections) + "," + std::to_string(rep.n_cycles) + "," +
           format_double(rep.days_below) + "," + format_double(rep.median_cd4) + "\n";
  }
  return out;
}

std::string trajectory_csv(const Trajectory& trajectory, const InjectionSchedule& schedule) {
  std::string out = "time_days,cd4,ki67,injections_marker\n";
  const auto& inj = schedule.injection_times();
  for (std::size_t i = 0; i < trajectory.times.size(); ++i) {
    const double t = trajectory.times[i];
    const double next = i + 1 < trajectory.times.size() ? trajectory.times[i + 1] : t + 1.0;
    const bool marker = std::any_of(inj.begin(), inj.end(), [&](double x) { return x >= t && x < next; });
    out += format_double(t) + "," + format_double(trajectory.states[i].total()) + "," +
           format_double(trajectory.states[i].p) + "," + (marker ? "1" : "0") + "\n";
  }
  return out;
}

std::string fit_report_json(const CohortFit& fit, const PriorSpec& prior) {
  const auto layout = parameter_layout(fit.spec.variant);
  const FitResult& r = fit.result;
  const std::vector<double> sd = r.sd();
  json doc;
  doc["model"] = std::string(variant_name(fit.spec.variant));
  if (fit.spec.feedback.active()) doc["feedback_nu"] = fit.spec.feedback.nu;
  json params = json::array();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const double est = r.theta[i];
    const double nat = natural(est, layout[i].scale);
    const double nat_sd = layout[i].scale == ParamScale::Log ? nat * sd[i] : sd[i];
    json p;
    p["name"] = layout[i].name;
    p["scale"] = layout[i].scale == ParamScale::Log ? "log" : "linear";
    p["estimate"] = est;
    p["sd"] = number_or_null(sd[i]);
    p["natural_estimate"] = nat;
    p["natural_sd"] = number_or_null(nat_sd);
    if (prior.penalized(i)) p["prior"] = {{"mean", prior.mean[i]}, {"sd", prior.sd[i]}};
    params.push_back(p);
  }
  doc["parameters"] = params;
  doc["loglik"] = number_or_null(r.loglik);
  doc["penalized_loglik"] = number_or_null(r.penalized_loglik);
  doc["lcva"] = number_or_null(r.lcva);
  doc["iterations"] = r.iterations;
  doc["final_rdm"] = number_or_null(r.final_rdm);
  doc["converged"] = r.converged;
  doc["warning"] = r.warning;
  doc["n_patients"] = r.units;
  json cov = json::array();
  for (Eigen::Index i = 0; i < r.covariance.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.covariance.cols(); ++j) row.push_back(number_or_null(r.covariance(i, j)));
    cov.push_back(row);
  }
  doc["covariance"] = cov;
  return doc.dump(2) + "\n";
}

Preset parse_parameter_document(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  if (doc.is_object() && doc.contains("parameters") && doc.at("parameters").is_object()) return parse_preset(text);
  Preset out;
  try {
    out.name = "fit-report";
    out.spec.variant = parse_variant(doc.at("model").get<std::string>());
    if (doc.contains("feedback_nu")) out.spec.feedback = FeedbackSpec::with_exponent(doc.at("feedback_nu").get<double>());
    const auto layout = parameter_layout(out.spec.variant);
    std::vector<double> theta(layout.size()), sd(layout.size());
    out.prior = PriorSpec::flat(layout.size());
    const json& params = doc.at("parameters");
    if (params.size() != layout.size()) throw ValidationError("report has the wrong number of parameters");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const json& p = params.at(i);
      if (p.at("name").get<std::string>() != layout[i].name)
        throw ValidationError("unexpected parameter '" + p.at("name").get<std::string>() + "'");
      theta[i] = p.at("estimate").get<double>();
      sd[i] = p.at("sd").is_number() ? p.at("sd").get<double>() : std::nan("");
      if (p.contains("prior")) {
        out.prior.mean[i] = p.at("prior").at("mean").get<double>();
        out.prior.sd[i] = p.at("prior").at("sd").get<double>();
      }
    }
    out.pop = from_theta(theta, out.spec.variant);
    out.theta_sd = sd;
    auto num = [&](const char* k) { return doc.contains(k) && doc.at(k).is_number() ? doc.at(k).get<double>() : std::nan(""); };
    out.loglik = num("loglik");
    out.penalized_loglik = num("penalized_loglik");
    out.lcva = num("lcva");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed fit report: ") + e.what());
  }
  out.spec.validate();
  return out;
}

std::string truth_json(const ModelSpec& spec, const PopulationParams& pop, const SyntheticCohort& cohort,
                       std::uint64_t seed) {
  const auto layout = parameter_layout(spec.variant);
  const auto theta = to_theta(pop, spec.variant);
  json doc;
  doc["model"] = std::string(variant_name(spec.variant));
  if (spec.feedback.active()) doc["feedback_nu"] = spec.feedback.nu;
  doc["seed"] = seed;
  json params = json::array();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    params.push_back({{"name", layout[i].name},
                      {"scale", layout[i].scale == ParamScale::Log ? "log" : "linear"},
                      {"estimate", theta[i]},
                      {"sd", nullptr},
                      {"natural_estimate", natural(theta[i], layout[i].scale)},
                      {"natural_sd", nullptr}});
  }
  doc["parameters"] = params;
  json effects = json::array();
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    effects.push_back({{"patient_id", cohort.patients[i].id},
                       {"u_lambda", cohort.effects[i].u_lambda},
                       {"u_rho", cohort.effects[i].u_rho}});
  }
  doc["random_effects"] = effects;
  return doc.dump(2) + "\n";
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot replace " + path.string());
  }
}

}  // namespace il7
