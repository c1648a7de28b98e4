#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "il7/error.hpp"
#include "il7/presets.hpp"
#include "il7/protocols.hpp"

using namespace il7;

namespace {

Preset table3() { return load_preset("table3-cycle"); }

double model_cd4(const Preset& pr, const InjectionSchedule& s, const RandomEffects& u, double t) {
  return simulate_patient(s, pr.spec, pr.pop, u, {t}).states[0].total();
}

}  // namespace

TEST(ProtocolSpec, Presets) {
  EXPECT_EQ(ProtocolSpec::preset("A").repeated_cycle_injections, 3);
  EXPECT_EQ(ProtocolSpec::preset("B").repeated_cycle_injections, 2);
  EXPECT_EQ(ProtocolSpec::preset("C").repeated_cycle_injections, 1);
  const auto d = ProtocolSpec::preset("D");
  EXPECT_EQ(d.initial_cycle_injections, 2);
  EXPECT_EQ(d.repeated_cycle_injections, 2);
  EXPECT_EQ(d.horizon, 1440.0);
  EXPECT_EQ(d.assessment_interval, 90.0);
  EXPECT_EQ(d.trigger_threshold, 550.0);
  EXPECT_THROW(ProtocolSpec::preset("E"), ValidationError);
  ProtocolSpec bad;
  bad.repeated_cycle_injections = 4;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(RunProtocol, HighProductionNeverTriggers) {
  const Preset pr = table3();
  const RandomEffects u{std::log(100.0), 0.0};
  const auto r = run_protocol(ProtocolSpec::preset("A"), pr.spec, pr.pop, u);
  EXPECT_EQ(r.n_cycles, 1);
  EXPECT_EQ(r.n_injections, 3);
  EXPECT_EQ(r.days_below, 0.0);
}

TEST(RunProtocol, TriggerConsistency) {
  const Preset pr = table3();
  for (const char* name : {"A", "B", "C", "D"}) {
    const ProtocolSpec proto = ProtocolSpec::preset(name);
    const auto r = run_protocol(proto, pr.spec, pr.pop, {});
    const auto starts = r.schedule.cycle_starts();
    std::size_t next = 1;
    for (double a = proto.assessment_interval; a < proto.horizon; a += proto.assessment_interval) {
      const bool started = next < starts.size() && starts[next] == a;
      const double last = [&] {
        double l = 0;
        for (double t : r.schedule.injection_times())
          if (t < a) l = t;
        return l;
      }();
      const bool in_progress = a - last < pr.spec.effect_window;
      const std::size_t day = static_cast<std::size_t>(a);
      const double cd4 = r.trajectory.states[day].total();
      if (started) {
        EXPECT_LT(cd4, proto.trigger_threshold) << name << " day " << a;
        EXPECT_FALSE(in_progress);
        ++next;
      } else if (!in_progress) {
        EXPECT_GE(cd4, proto.trigger_threshold) << name << " day " << a;
      }
    }
    EXPECT_EQ(next, starts.size());
  }
}

TEST(RunProtocol, Accounting) {
  const Preset pr = table3();
  const auto r = run_protocol(ProtocolSpec::preset("B"), pr.spec, pr.pop, {});
  const auto cycles = r.schedule.cycles();
  ASSERT_FALSE(cycles.empty());
  EXPECT_EQ(cycles.front().injections, 3);
  int total = 0;
  for (std::size_t c = 0; c < cycles.size(); ++c) {
    if (c > 0) {
      EXPECT_EQ(cycles[c].injections, 2);
    }
    total += cycles[c].injections;
  }
  EXPECT_EQ(total, r.n_injections);
  EXPECT_EQ(static_cast<int>(cycles.size()), r.n_cycles);
  ASSERT_EQ(r.trajectory.times.size(), 1441u);
  std::vector<double> samples;
  for (std::size_t i = 0; i < 1440; ++i) samples.push_back(r.trajectory.states[i].total());
  const double below = static_cast<double>(std::count_if(samples.begin(), samples.end(), [](double v) { return v < 500; }));
  EXPECT_EQ(below, r.days_below);
  std::sort(samples.begin(), samples.end());
  EXPECT_DOUBLE_EQ(r.median_cd4, 0.5 * (samples[719] + samples[720]));
}

TEST(RunProtocol, TrajectoryMatchesDirectSimulation) {
  const Preset pr = table3();
  const auto r = run_protocol(ProtocolSpec::preset("C"), pr.spec, pr.pop, {0.1, -0.1});
  for (double t : {0.0, 45.0, 700.0, 1439.0}) {
    EXPECT_NEAR(r.trajectory.states[static_cast<std::size_t>(t)].total(), model_cd4(pr, r.schedule, {0.1, -0.1}, t),
                1e-5 * 700);
  }
}

TEST(RunProtocol, HorizonTruncation) {
  const Preset pr = table3();
  for (double h : {1.0, 10.0, 200.0, 365.0}) {
    ProtocolSpec proto = ProtocolSpec::preset("A");
    proto.horizon = h;
    const auto r = run_protocol(proto, pr.spec, pr.pop, {-0.5, -0.5});
    for (double t : r.schedule.injection_times()) EXPECT_LE(t, h);
    EXPECT_EQ(r.trajectory.times.back(), h);
  }
  ProtocolSpec one = ProtocolSpec::preset("A");
  one.horizon = 1;
  const auto r = run_protocol(one, pr.spec, pr.pop, {});
  EXPECT_EQ(r.n_injections, 1);
  EXPECT_EQ(r.days_below, 1.0);
}

TEST(RunProtocol, MinCycleGap) {
  const Preset pr = table3();
  ProtocolSpec proto = ProtocolSpec::preset("C");
  const auto free = run_protocol(proto, pr.spec, pr.pop, {});
  proto.min_cycle_gap = 300;
  const auto capped = run_protocol(proto, pr.spec, pr.pop, {});
  const auto starts = capped.schedule.cycle_starts();
  for (std::size_t i = 1; i < starts.size(); ++i) EXPECT_GE(starts[i] - starts[i - 1], 300.0);
  EXPECT_LE(capped.n_cycles, free.n_cycles);
}

TEST(RunProtocol, MoreInjectionsKeepCountsHigher) {
  const Preset pr = table3();
  const auto a = run_protocol(ProtocolSpec::preset("A"), pr.spec, pr.pop, {});
  const auto c = run_protocol(ProtocolSpec::preset("C"), pr.spec, pr.pop, {});
  EXPECT_GE(a.median_cd4, c.median_cd4);
  EXPECT_GE(a.n_injections, c.n_injections);
}

TEST(EffectsForRates, NaturalScaleIndividualRates) {
  const Preset pr = table3();
  const RandomEffects u = effects_for_rates(pr.pop, 6.586, 4.797);
  const auto r = pr.pop.baseline_rates(u);
  EXPECT_NEAR(r.lambda, 6.586, 1e-12);
  EXPECT_NEAR(r.rho, 4.797, 1e-12);
  EXPECT_THROW(effects_for_rates(pr.pop, 0.0, 1.0), DomainError);
}

TEST(CompareProtocols, RowsInOrderAndSingleProtocol) {
  const Preset pr = table3();
  const auto rows = compare_protocols({ProtocolSpec::preset("D")}, pr.spec, pr.pop, {});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].protocol, "D");
  ASSERT_TRUE(rows[0].report.has_value());
  ProtocolSpec broken = ProtocolSpec::preset("A");
  broken.dose = -1;
  const auto mixed = compare_protocols({ProtocolSpec::preset("A"), broken}, pr.spec, pr.pop, {});
  EXPECT_TRUE(mixed[0].report.has_value());
  EXPECT_FALSE(mixed[1].report.has_value());
  EXPECT_FALSE(mixed[1].error.empty());
}

TEST(SynthCohort, NoiselessObservationsLieOnModel) {
  const Preset pr = table3();
  ObservationDesign d;
  d.noise = false;
  d.ki67_fraction = 1.0;
  const auto c = synth_cohort(pr.spec, pr.pop, 4, d, 3);
  ASSERT_EQ(c.patients.size(), 4u);
  EXPECT_EQ(c.patients[0].id, "S0001");
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& pt = c.patients[i];
    for (const auto& o : pt.observations) {
      const auto s = simulate_patient(pt.schedule, pr.spec, pr.pop, c.effects[i], {o.time}).states[0];
      const double m = o.kind == ObsKind::Cd4 ? s.total() : s.p;
      EXPECT_NEAR(o.value, m, 1e-6 * m);
    }
    EXPECT_TRUE(std::any_of(pt.observations.begin(), pt.observations.end(),
                            [](const Observation& o) { return o.kind == ObsKind::Ki67; }));
  }
}

TEST(SynthCohort, SeedDeterminismAndVisitDesign) {
  const Preset pr = table3();
  const auto a = synth_cohort(pr.spec, pr.pop, 5, {}, 42);
  const auto b = synth_cohort(pr.spec, pr.pop, 5, {}, 42);
  const auto c = synth_cohort(pr.spec, pr.pop, 5, {}, 43);
  for (std::size_t i = 0; i < 5; ++i) {
    ASSERT_EQ(a.patients[i].observations.size(), b.patients[i].observations.size());
    for (std::size_t k = 0; k < a.patients[i].observations.size(); ++k)
      EXPECT_EQ(a.patients[i].observations[k].value, b.patients[i].observations[k].value);
  }
  EXPECT_NE(a.effects[0].u_lambda, c.effects[0].u_lambda);
  // the first cycle is always sampled densely
  for (const auto& pt : a.patients) {
    for (double t : {0.0, 7.0, 14.0, 21.0, 28.0, 35.0, 56.0, 77.0}) {
      EXPECT_TRUE(std::any_of(pt.observations.begin(), pt.observations.end(),
                              [&](const Observation& o) { return o.time == t && o.kind == ObsKind::Cd4; }));
    }
    for (const auto& o : pt.observations) EXPECT_LE(o.time, 720.0);
  }
}

TEST(SynthCohort, NoiseHasConfiguredSd) {
  const Preset pr = table3();
  ObservationDesign noisy, clean;
  clean.noise = false;
  noisy.ki67_fraction = clean.ki67_fraction = 0.0;
  const auto a = synth_cohort(pr.spec, pr.pop, 600, noisy, 99);
  const auto b = synth_cohort(pr.spec, pr.pop, 600, clean, 99);
  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 600; ++i) {
    ASSERT_EQ(a.patients[i].observations.size(), b.patients[i].observations.size());
    for (std::size_t k = 0; k < a.patients[i].observations.size(); ++k) {
      const double r = transform(a.patients[i].observations[k].value) - transform(b.patients[i].observations[k].value);
      ss += r * r;
      ++n;
    }
  }
  ASSERT_GT(n, 10000u);
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(n)), pr.pop.sigma_cd4, 0.02 * pr.pop.sigma_cd4);
}

TEST(SynthCohort, FirstCycleOnlyDesign) {
  const Preset pr = table3();
  ObservationDesign d;
  d.repeat_cycles = false;
  const auto c = synth_cohort(pr.spec, pr.pop, 3, d, 1);
  for (const auto& pt : c.patients) {
    EXPECT_EQ(pt.schedule.cycle_count(), 1u);
    EXPECT_LE(pt.observations.back().time, 77.0);
  }
  EXPECT_THROW(synth_cohort(pr.spec, pr.pop, 0, d, 1), ValidationError);
}
