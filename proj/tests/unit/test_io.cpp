#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "il7/error.hpp"
#include "il7/io.hpp"
#include "json.hpp"

using namespace il7;
namespace fs = std::filesystem;

namespace {

std::vector<PatientRecord> small_cohort() {
  const Preset pr = load_preset("table3-cycle");
  return synth_cohort(pr.spec, pr.pop, 4, ObservationDesign{}, 17).patients;
}

std::size_t parse_line(const std::string& obs, const std::string& inj = "patient_id,time_days,dose_ug_per_kg\n") {
  try {
    std::istringstream o(obs), i(inj);
    assemble_cohort(read_observations(o), read_injections(i));
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("il7_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(0.1), "0.1");
  for (double v : {1.0 / 3.0, 272.29123456789, 1e-300, -5.5}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(Csv, CohortRoundTripIsExact) {
  const auto cohort = small_cohort();
  std::istringstream o(observations_csv(cohort)), i(injections_csv(cohort));
  const auto back = assemble_cohort(read_observations(o), read_injections(i));
  ASSERT_EQ(back.size(), cohort.size());
  for (std::size_t k = 0; k < cohort.size(); ++k) {
    EXPECT_EQ(back[k].id, cohort[k].id);
    EXPECT_EQ(back[k].schedule.injection_times(), cohort[k].schedule.injection_times());
    EXPECT_EQ(back[k].schedule.cycle_starts(), cohort[k].schedule.cycle_starts());
    EXPECT_EQ(back[k].schedule.dose(), cohort[k].schedule.dose());
    ASSERT_EQ(back[k].observations.size(), cohort[k].observations.size());
    for (std::size_t j = 0; j < cohort[k].observations.size(); ++j) {
      EXPECT_EQ(back[k].observations[j].value, cohort[k].observations[j].value);
      EXPECT_EQ(back[k].observations[j].kind, cohort[k].observations[j].kind);
    }
  }
}

TEST(Csv, ParseErrorsCarryLineNumbers) {
  const std::string h = "patient_id,time_days,kind,value\n";
  EXPECT_EQ(parse_line(h + "a,1,CD4,300\nb,x,CD4,3\n"), 3u);
  EXPECT_EQ(parse_line(h + "a,1,CD4\n"), 2u);
  EXPECT_EQ(parse_line(h + "a,1,CD8,300\n"), 2u);
  EXPECT_EQ(parse_line(h + "a,1,CD4,-3\n"), 2u);
  EXPECT_EQ(parse_line("id,time,kind,value\n"), 1u);
  EXPECT_EQ(parse_line(""), 1u);
  EXPECT_EQ(parse_line(h + ",1,CD4,3\n"), 2u);
  EXPECT_EQ(parse_line(h, "patient_id,time_days,dose_ug_per_kg\na,0,0\n"), 2u);
  EXPECT_EQ(parse_line(h + "a,1,ki67,30\n"), 0u);
}

TEST(Csv, MixedDosesRejected) {
  std::istringstream o("patient_id,time_days,kind,value\na,1,CD4,300\n");
  std::istringstream i("patient_id,time_days,dose_ug_per_kg\na,0,10\na,7,20\n");
  EXPECT_THROW(assemble_cohort(read_observations(o), read_injections(i)), ValidationError);
}

TEST(Csv, CyclesRecoveredFromInjectionTimes) {
  std::istringstream o("patient_id,time_days,kind,value\nz,1,CD4,300\ny,2,CD4,310\n");
  std::istringstream i("patient_id,time_days,dose_ug_per_kg\nz,0,20\nz,7,20\nz,14,20\nz,180,20\ny,5,20\n");
  const auto c = assemble_cohort(read_observations(o), read_injections(i));
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].id, "y");
  EXPECT_EQ(c[1].schedule.cycle_count(), 2u);
}

TEST(Csv, TrajectoryAndComparisonTables) {
  Trajectory tr{{0, 1, 2, 8}, {{270, 6}, {271, 6}, {280, 9}, {300, 10}}};
  InjectionSchedule s({{0, 2}}, 20);
  EXPECT_EQ(trajectory_csv(tr, s), "time_days,cd4,ki67,injections_marker\n0,276,6,1\n1,277,6,0\n2,289,9,1\n8,310,10,0\n");
  ComparisonRow ok{"A", ProtocolReport{}, ""};
  ok.report->n_injections = 21;
  ok.report->n_cycles = 7;
  ok.report->days_below = 60;
  ok.report->median_cd4 = 678.5;
  const std::string csv = comparison_csv({ok});
  EXPECT_EQ(csv, "protocol,n_injections,n_cycles,days_below_500,median_cd4\nA,21,7,60,678.5\n");
}

TEST(Files, ReadCohortPrefixesFileName) {
  const fs::path d = temp_dir("read");
  atomic_write(d / "obs.csv", "patient_id,time_days,kind,value\na,1,CD4,oops\n");
  atomic_write(d / "inj.csv", "patient_id,time_days,dose_ug_per_kg\na,0,20\n");
  try {
    read_cohort(d / "obs.csv", d / "inj.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("obs.csv"), std::string::npos);
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(read_cohort(d / "missing.csv", d / "inj.csv"), IoError);
}

TEST(Files, AtomicWriteReplacesWithoutLeftovers) {
  const fs::path d = temp_dir("atomic");
  atomic_write(d / "x.txt", "first");
  atomic_write(d / "x.txt", "second");
  EXPECT_EQ(read_file(d / "x.txt"), "second");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d)) ++n;
  EXPECT_EQ(n, 1u);
  atomic_write(d / "sub" / "dir" / "y.txt", "made");
  EXPECT_EQ(read_file(d / "sub" / "dir" / "y.txt"), "made");
  EXPECT_THROW(atomic_write(d / "x.txt" / "z.txt", "x"), IoError);
}

TEST(Json, FitReportRoundTrip) {
  const Preset pr = load_preset("table2-3beta");
  CohortFit f;
  f.spec = pr.spec;
  f.pop = pr.pop;
  f.result.theta = to_theta(pr.pop, pr.spec.variant);
  const std::size_t p = f.result.theta.size();
  f.result.covariance = Eigen::MatrixXd::Identity(p, p) * 0.01;
  f.result.loglik = -273.3;
  f.result.penalized_loglik = -279.8;
  f.result.lcva = 2.136;
  f.result.converged = true;
  f.result.units = 7;
  const std::string text = fit_report_json(f, pr.prior);
  const Preset back = parse_parameter_document(text);
  EXPECT_EQ(back.spec.variant, ModelVariant::ThreeBeta);
  const auto theta = to_theta(back.pop, back.spec.variant);
  for (std::size_t i = 0; i < p; ++i) {
    EXPECT_NEAR(theta[i], f.result.theta[i], 1e-15);
    EXPECT_NEAR(back.theta_sd[i], 0.1, 1e-15);
    EXPECT_EQ(back.prior.sd[i], pr.prior.sd[i]);
  }
  EXPECT_EQ(back.lcva, 2.136);
  const auto doc = nlohmann::json::parse(text);
  EXPECT_EQ(doc["n_patients"], 7);
  EXPECT_EQ(doc["parameters"][0]["scale"], "log");
  EXPECT_NEAR(doc["parameters"][0]["natural_estimate"].get<double>(), std::exp(pr.pop.phi_lambda), 1e-12);
  EXPECT_NEAR(doc["parameters"][0]["natural_sd"].get<double>(), std::exp(pr.pop.phi_lambda) * 0.1, 1e-12);
}

TEST(Json, PresetDocumentsAccepted) {
  const Preset p = parse_parameter_document(read_file(fs::path(IL7_PRESET_DIR) / "table1-basic.json"));
  EXPECT_EQ(p.name, "table1-basic");
  EXPECT_THROW(parse_parameter_document("[1,2]"), ValidationError);
  EXPECT_THROW(parse_parameter_document("{oops"), ParseError);
}

TEST(Json, TruthDocument) {
  const Preset pr = load_preset("table3-cycle");
  const auto cohort = synth_cohort(pr.spec, pr.pop, 2, ObservationDesign{}, 5);
  const auto doc = nlohmann::json::parse(truth_json(pr.spec, pr.pop, cohort, 5));
  EXPECT_EQ(doc["seed"], 5);
  EXPECT_EQ(doc["random_effects"].size(), 2u);
}
