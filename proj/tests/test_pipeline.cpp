#include <gtest/gtest.h>

#include <cmath>
#include <iostream>
#include <set>

#include "fep/pipeline.hpp"
#include "fep/synthetic.hpp"

using namespace fep;

namespace {

struct Bench {
  SyntheticData data;
  std::vector<SourceBundle> additional;
  CheckpointSchedule schedule;
  Split split;
};

Bench bench(std::uint64_t seed, int n = 300, double additional_signal = 2.0, double primary_noise = 3.0) {
  SyntheticConfig spec;
  spec.n_students = n;
  spec.n_checkpoints = 5;
  spec.additional_signal = additional_signal;
  spec.primary_noise = primary_noise;
  Bench b{generate_synthetic(spec, seed), {}, {}, {}};
  b.additional.push_back(b.data.additional);
  b.schedule = derive_schedule(b.data.primary);
  b.split = stratified_split(b.data.primary, b.data.primary.student_ids(), 0.2, seed);
  return b;
}

LearnerConfig fast_learner(std::uint64_t seed = 0) {
  LearnerConfig c;
  c.n_rounds = 30;
  c.seed = seed;
  return c;
}

FittedCheckpoints fit(const Bench& b, const PipelineOptions& options = {}) {
  return fit_checkpoints(b.data.primary, b.additional, b.schedule, b.split.train, b.split.test,
                         boosted_trainer(fast_learner()), options);
}

// Always predicts the same probability.
class Constant : public Classifier {
 public:
  explicit Constant(double p) : p_(p) {}
  std::vector<double> predict_proba(const FeatureMatrix& X) const override { return std::vector<double>(X.rows(), p_); }

 private:
  double p_;
};

const std::vector<double> kGrid10 = {0.500001, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 1.0};

}  // namespace

TEST(Split, StratifiedDisjointAndDeterministic) {
  auto b = bench(1);
  auto ids = b.data.primary.student_ids();
  std::set<StudentId> train(b.split.train.begin(), b.split.train.end());
  std::set<StudentId> test(b.split.test.begin(), b.split.test.end());
  EXPECT_EQ(train.size() + test.size(), ids.size());
  for (const auto& id : test) EXPECT_FALSE(train.count(id));
  EXPECT_NEAR(static_cast<double>(test.size()) / ids.size(), 0.2, 0.01);
  auto again = stratified_split(b.data.primary, ids, 0.2, 1);
  EXPECT_EQ(again.test, b.split.test);
  auto other = stratified_split(b.data.primary, ids, 0.2, 2);
  EXPECT_NE(other.test, b.split.test);
  // Class balance is preserved within a student of the overall rate.
  auto success_rate = [&](const std::vector<StudentId>& s) {
    double k = 0;
    for (const auto& id : s) k += is_success_result(b.data.primary.find_student(id)->final_result);
    return k / s.size();
  };
  EXPECT_NEAR(success_rate(b.split.test), success_rate(ids), 1.0 / b.split.test.size() + 1e-9);
}

TEST(Gate, ThresholdDomain) {
  EXPECT_THROW(GateConfig::fixed(0.5), ConfigError);
  EXPECT_THROW(GateConfig::fixed(1.01), ConfigError);
  EXPECT_NO_THROW(GateConfig::fixed(1.0));
  auto g = GateConfig::fixed(0.8);
  EXPECT_TRUE(g.fires(0.79));
  EXPECT_FALSE(g.fires(0.8));
}

TEST(Pipeline, NeverFiringGateEqualsSingleSource) {
  for (std::uint64_t seed : {1, 2}) {
    auto b = bench(seed);
    auto f = fit(b);
    auto [fep, ledger] = assemble_fep(f, GateConfig::fixed(0.5 + 1e-12));
    auto ss = assemble_ss(f);
    EXPECT_EQ(fep, ss);
    EXPECT_EQ(ledger.total_entries(), 0u);
    EXPECT_EQ(data_consumption(ledger, fep.student_ids), 1.0);
    // The standalone run gives the same matrix.
    EXPECT_EQ(run_ss(b.data.primary, b.schedule, b.split, fast_learner()), ss);
  }
}

TEST(Pipeline, AlwaysFiringGateEqualsMultiSource) {
  for (std::uint64_t seed : {1, 2}) {
    auto b = bench(seed);
    auto f = fit(b);
    for (const auto& cp : f.per_checkpoint)
      for (const auto& p : cp.ss) ASSERT_LT(p.confidence, 1.0);
    auto [fep, ledger] = assemble_fep(f, GateConfig::fixed(1.0));
    auto ms = assemble_ms(f);
    EXPECT_TRUE(fep.same_predictions(ms));
    EXPECT_EQ(data_consumption(ledger, fep.student_ids), 2.0);
    for (const auto& id : fep.student_ids) EXPECT_EQ(ledger.count_for(id), 1u);
    EXPECT_EQ(run_ms(b.data.primary, b.additional, b.schedule, b.split, fast_learner()), ms);
  }
}

TEST(Pipeline, SourcesUsedPerModel) {
  auto f = fit(bench(3));
  for (const auto& row : assemble_ss(f).cells)
    for (const auto& c : row) EXPECT_EQ(c.sources_used, std::vector<SourceTag>{SourceTag::primary()});
  for (const auto& row : assemble_ms(f).cells)
    for (const auto& c : row)
      EXPECT_EQ(c.sources_used, (std::vector<SourceTag>{SourceTag::primary(), SourceTag::additional(0)}));
}

TEST(Pipeline, MultiSourceFeatureCountIsSum) {
  auto b = bench(3);
  auto p = featurize(b.data.primary, b.schedule.days[0], b.split.train);
  auto a = featurize(b.data.additional, b.schedule.days[0], b.split.train);
  EXPECT_EQ(hconcat({&p, &a}).cols(), feature_names(b.data.primary).size() + feature_names(b.data.additional).size());
}

TEST(Pipeline, GatedStudentsStayGatedWithOneLedgerEntry) {
  auto f = fit(bench(4));
  auto [fep, ledger] = assemble_fep(f, GateConfig::fixed(0.9));
  auto ms = assemble_ms(f);
  std::size_t gated = 0;
  for (std::size_t i = 0; i < fep.student_ids.size(); ++i) {
    const auto& id = fep.student_ids[i];
    std::optional<std::size_t> first;
    for (std::size_t t = 0; t < fep.checkpoints.size(); ++t) {
      const auto& c = fep.cells[i][t];
      if (c.phase == Phase::Two && !first) first = t;
      if (first) EXPECT_EQ(c.phase, Phase::Two) << id;
      if (c.phase == Phase::Two) {
        EXPECT_TRUE(c.same_prediction(ms.cells[i][t]));
      } else {
        EXPECT_GE(c.confidence, 0.9);
      }
    }
    EXPECT_EQ(ledger.count_for(id), first ? 1u : 0u);
    if (first) {
      EXPECT_EQ(ledger.entries_for(id)[0].acquired_at, static_cast<int>(*first));
      EXPECT_LT(f.per_checkpoint[*first].ss[i].confidence, 0.9);
      ++gated;
    }
  }
  EXPECT_GT(gated, 0u);
  EXPECT_LT(gated, fep.student_ids.size());
  // Consumption identity.
  EXPECT_DOUBLE_EQ(data_consumption(ledger, fep.student_ids),
                   1.0 + static_cast<double>(gated) / static_cast<double>(fep.student_ids.size()));
}

TEST(Pipeline, LedgerOnlyGrowsAcrossCheckpoints) {
  auto f = fit(bench(5));
  auto [fep, ledger] = assemble_fep(f, GateConfig::fixed(0.85));
  std::size_t prev = 0;
  for (std::size_t t = 0; t < fep.checkpoints.size(); ++t) {
    std::size_t held = 0;
    for (const auto& [id, entries] : ledger.entries())
      for (const auto& e : entries) held += e.acquired_at <= static_cast<int>(t);
    EXPECT_GE(held, prev);
    prev = held;
  }
  EXPECT_EQ(prev, ledger.total_entries());
}

TEST(Pipeline, SandwichAndMonotoneConsumptionAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto f = fit(bench(seed, 200));
    AcquisitionLedger none;
    const double ss = data_consumption(none, f.evaluated);
    const double ms = data_consumption(full_ledger(f), f.evaluated);
    double prev = 0;
    std::set<StudentId> prev_gated;
    for (double theta : kGrid10) {
      auto [m, ledger] = assemble_fep(f, GateConfig::fixed(theta));
      const double c = data_consumption(ledger, f.evaluated);
      EXPECT_LE(ss, c);
      EXPECT_LE(c, ms);
      EXPECT_GE(c, prev) << "seed " << seed << " theta " << theta;
      std::set<StudentId> gated;
      for (const auto& [id, e] : ledger.entries()) gated.insert(id);
      EXPECT_TRUE(std::includes(gated.begin(), gated.end(), prev_gated.begin(), prev_gated.end()));
      prev = c;
      prev_gated = gated;
    }
  }
}

TEST(Pipeline, ResultsIndependentOfThreadCount) {
  auto b = bench(6);
  PipelineOptions one, many;
  many.jobs = 4;
  auto a = fit(b, one);
  auto c = fit(b, many);
  EXPECT_EQ(assemble_ss(a), assemble_ss(c));
  EXPECT_EQ(assemble_ms(a), assemble_ms(c));
  EXPECT_EQ(assemble_fep(a, GateConfig::fixed(0.9)).first, assemble_fep(c, GateConfig::fixed(0.9)).first);
}

TEST(Pipeline, ZeroPrimaryNoiseGivesPerfectSingleSourceAccuracy) {
  for (std::uint64_t seed : {1, 2}) {
    auto b = bench(seed, 600, 2.0, 0.0);
    auto ss = run_ss(b.data.primary, b.schedule, b.split, fast_learner());
    auto grid = ss.correctness();
    for (std::size_t t = 0; t < ss.checkpoints.size(); ++t) EXPECT_EQ(accuracy(grid, t), 1.0) << "checkpoint " << t;
  }
}

TEST(Pipeline, UnlabelableCheckpointIsDroppedWithWarning) {
  auto b = bench(7);
  auto schedule = CheckpointSchedule::explicit_days({b.schedule.days[0], b.data.primary.course_length_days},
                                                   b.data.primary.course_length_days);
  auto f = fit_checkpoints(b.data.primary, b.additional, schedule, b.split.train, b.split.test,
                           boosted_trainer(fast_learner()), {});
  EXPECT_EQ(f.schedule.days, std::vector<int>{b.schedule.days[0]});
  EXPECT_FALSE(f.warnings.empty());
}

TEST(TuneGate, SingletonGridReturnsThatThreshold) {
  auto b = bench(8);
  auto g = tune_gate(b.data.primary, b.additional, b.schedule, b.split.train, fast_learner(), {0.500001}, 8);
  EXPECT_EQ(g.threshold, 0.500001);
  ASSERT_EQ(g.tuning.size(), 1u);
  EXPECT_THROW(tune_gate(b.data.primary, b.additional, b.schedule, b.split.train, fast_learner(), {}, 8), ConfigError);
}

TEST(TuneGate, EqualAccuracyPrefersLowerConsumption) {
  auto b = bench(9);
  // Every model predicts 0.7, so accuracy is the same for every threshold.
  Trainer constant = [](const FeatureMatrix&, const LabelVector&) -> std::unique_ptr<Classifier> {
    return std::make_unique<Constant>(0.7);
  };
  auto g = tune_gate(b.data.primary, b.additional, b.schedule, b.split.train, constant, {0.9, 0.75, 0.6, 0.65}, 9);
  EXPECT_EQ(g.threshold, 0.6);
  for (const auto& c : g.tuning) EXPECT_EQ(c.correct, g.tuning[0].correct);
}

TEST(TuneGate, InformativeAdditionalSourceMakesGateFire) {
  int fired = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto b = bench(seed, 500, 4.0);
    auto g = tune_gate(b.data.primary, b.additional, b.schedule, b.split.train, fast_learner(seed), kGrid10, seed);
    fired += g.threshold > 0.500001;
    EXPECT_EQ(g.tuning.size(), kGrid10.size());
  }
  EXPECT_EQ(fired, 3);
}

// With an uninformative additional source the multi-source model should only
// differ from the single-source one by estimation noise.
TEST(Pipeline, UninformativeAdditionalSourceDoesNotChangeAccuracyBeyondNoise) {
  std::vector<double> diffs;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto b = bench(seed, 400, 0.0);
    auto f = fit_checkpoints(b.data.primary, b.additional, b.schedule, b.split.train, b.split.test,
                             boosted_trainer(fast_learner(seed)), {});
    auto ss = assemble_ss(f).correctness();
    auto ms = assemble_ms(f).correctness();
    double d = 0;
    for (std::size_t t = 0; t < f.schedule.size(); ++t) d += accuracy(ms, t) - accuracy(ss, t);
    diffs.push_back(d / static_cast<double>(f.schedule.size()));
  }
  double mean = 0, var = 0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  for (double d : diffs) var += (d - mean) * (d - mean);
  const double se = std::sqrt(var / (diffs.size() - 1)) / std::sqrt(static_cast<double>(diffs.size()));
  std::cout << "[ band ] mean(MS - SS) = " << mean << ", standard error = " << se << "\n";
  EXPECT_LE(std::abs(mean), 2 * se);
}

TEST(Export, PredictionsCsvColumns) {
  auto f = fit(bench(10));
  auto [fep, ledger] = assemble_fep(f, GateConfig::fixed(0.9));
  std::ostringstream out;
  write_predictions_csv(out, fep);
  auto text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "student_id,checkpoint_day,predicted,correct,confidence,phase,sources");
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')),
            1 + fep.student_ids.size() * fep.checkpoints.size());
  EXPECT_NE(text.find("primary+additional0"), std::string::npos);
}

namespace {

// Mean log loss against Platt's smoothed targets, written out independently.
double platt_objective(const std::vector<double>& p, const std::vector<Outcome>& y, double a, double b) {
  double pos = 0;
  for (auto o : y) pos += o == Outcome::Success;
  const double neg = static_cast<double>(y.size()) - pos;
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = y[i] == Outcome::Success ? (pos + 1) / (pos + 2) : 1 / (neg + 2);
    const double q = 1 / (1 + std::exp(-(a * std::log(p[i] / (1 - p[i])) + b)));
    total -= t * std::log(q) + (1 - t) * std::log(1 - q);
  }
  return total / static_cast<double>(p.size());
}

}  // namespace

TEST(PlattFit, BeatsGridSearchAndIsStationary) {
  Rng rng(31);
  std::vector<double> p;
  std::vector<Outcome> y;
  for (int i = 0; i < 400; ++i) {
    const double z = -3 + 6 * rng.uniform();
    p.push_back(1 / (1 + std::exp(-z)));
    y.push_back(rng.uniform() < 1 / (1 + std::exp(-(0.6 * z + 0.4))) ? Outcome::Success : Outcome::Failure);
  }
  const auto s = fit_platt(p, y);
  const double best = platt_objective(p, y, s.slope, s.intercept);
  for (double a = -1.0; a <= 3.0; a += 0.05)
    for (double b = -2.0; b <= 2.0; b += 0.05) ASSERT_LE(best, platt_objective(p, y, a, b) + 1e-12) << a << " " << b;
  const double h = 1e-5;
  EXPECT_NEAR((platt_objective(p, y, s.slope + h, s.intercept) - platt_objective(p, y, s.slope - h, s.intercept)) /
                  (2 * h), 0.0, 1e-7);
  EXPECT_NEAR((platt_objective(p, y, s.slope, s.intercept + h) - platt_objective(p, y, s.slope, s.intercept - h)) /
                  (2 * h), 0.0, 1e-7);
}

TEST(PlattFit, RecoversKnownMiscalibration) {
  Rng rng(8);
  std::vector<double> p;
  std::vector<Outcome> y;
  for (int i = 0; i < 20000; ++i) {
    const double z = -4 + 8 * rng.uniform();
    p.push_back(1 / (1 + std::exp(-z)));
    y.push_back(rng.uniform() < 1 / (1 + std::exp(-(2 * z - 0.5))) ? Outcome::Success : Outcome::Failure);
  }
  const auto s = fit_platt(p, y);
  EXPECT_NEAR(s.slope, 2.0, 0.15);
  EXPECT_NEAR(s.intercept, -0.5, 0.1);
}

TEST(PlattFit, SeparableAndDegenerateInputsStayFinite) {
  std::vector<double> p{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  std::vector<Outcome> y{Outcome::Failure, Outcome::Failure, Outcome::Failure,
                         Outcome::Success, Outcome::Success, Outcome::Success};
  const auto s = fit_platt(p, y);
  EXPECT_TRUE(std::isfinite(s.slope));
  EXPECT_TRUE(std::isfinite(s.intercept));
  EXPECT_GT(s.slope, 0.0);
  // Every input identical: only the intercept can move.
  const auto flat = fit_platt(std::vector<double>(4, 0.5), std::vector<Outcome>{Outcome::Success, Outcome::Success,
                                                                                 Outcome::Success, Outcome::Failure});
  EXPECT_TRUE(std::isfinite(flat.intercept));
  EXPECT_NEAR(sigmoid(flat.intercept), (3.0 + 1) / (3 + 2) * 0.75 + 1.0 / 3 * 0.25, 1e-6);
  EXPECT_THROW(fit_platt(std::vector<double>{}, std::vector<Outcome>{}), InvariantError);
}

TEST(Gate, IdentityCalibrationMatchesRawConfidence) {
  GateConfig g = GateConfig::fixed(0.8);
  g.calibration = GateConfig::Calibration::HoldoutTuned;
  for (double p = 0.01; p < 1.0; p += 0.01) {
    auto pred = Prediction::from_probability("x", p);
    EXPECT_NEAR(g.gate_confidence(pred), pred.confidence, 1e-12);
  }
  g.platt = {0.0, 0.0};  // flattens everything to 0.5
  EXPECT_TRUE(g.fires_for(Prediction::from_probability("x", 0.99)));
}

TEST(TuneGate, HoldoutCalibrationIsFittedAndKeepsConsumptionMonotone) {
  auto b = bench(4, 400);
  auto gate = tune_gate(b.data.primary, b.additional, b.schedule, b.split.train, fast_learner(), kGrid10, 4, {},
                        0.25, GateConfig::Calibration::HoldoutTuned);
  EXPECT_EQ(gate.calibration, GateConfig::Calibration::HoldoutTuned);
  EXPECT_TRUE(std::isfinite(gate.platt.slope));
  EXPECT_NE(gate.platt, PlattScaling{});
  ASSERT_EQ(gate.tuning.size(), kGrid10.size());
  std::size_t best = 0;
  for (const auto& c : gate.tuning) best = std::max(best, c.correct);
  for (const auto& c : gate.tuning)
    if (c.threshold == gate.threshold) EXPECT_EQ(c.correct, best);
  auto f = fit(b);
  double previous = 1.0;
  for (double theta : kGrid10) {
    GateConfig g = gate;
    g.threshold = theta;
    auto [m, ledger] = assemble_fep(f, g);
    const double c = data_consumption(ledger, f.evaluated);
    EXPECT_GE(c, previous);
    EXPECT_LE(c, 2.0);
    previous = c;
  }
}
