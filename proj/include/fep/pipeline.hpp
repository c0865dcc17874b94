#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fep/bundle.hpp"
#include "fep/common.hpp"
#include "fep/features.hpp"
#include "fep/learner.hpp"
#include "fep/ledger.hpp"
#include "fep/metrics.hpp"
#include "fep/parallel.hpp"
#include "fep/rng.hpp"

namespace fep {

enum class Phase : std::uint8_t { One = 1, Two = 2 };

struct PredictionCell {
  Outcome predicted = Outcome::Failure;
  Outcome truth = Outcome::Failure;
  double confidence = 0.5;
  bool correct = false;
  Phase phase = Phase::One;
  std::vector<SourceTag> sources_used;

  bool operator==(const PredictionCell&) const = default;

  // Equality ignoring the phase annotation, which only the gated model sets.
  bool same_prediction(const PredictionCell& o) const {
    return predicted == o.predicted && truth == o.truth && confidence == o.confidence && correct == o.correct &&
           sources_used == o.sources_used;
  }

  bool uses_additional() const {
    return std::any_of(sources_used.begin(), sources_used.end(), [](SourceTag t) { return !t.is_primary(); });
  }
};

struct PredictionMatrix {
  std::vector<StudentId> student_ids;
  CheckpointSchedule checkpoints;
  std::vector<std::vector<PredictionCell>> cells;  // [student][checkpoint]

  bool operator==(const PredictionMatrix&) const = default;

  bool same_predictions(const PredictionMatrix& o) const {
    if (student_ids != o.student_ids || checkpoints.days != o.checkpoints.days) return false;
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t t = 0; t < cells[i].size(); ++t)
        if (!cells[i][t].same_prediction(o.cells[i][t])) return false;
    return true;
  }

  CorrectnessGrid correctness() const {
    CorrectnessGrid grid(student_ids, checkpoints.size());
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t t = 0; t < cells[i].size(); ++t) grid.set(i, t, cells[i][t].correct);
    return grid;
  }

  void validate() const {
    if (cells.size() != student_ids.size()) throw InvariantError("prediction matrix row count mismatch");
    for (const auto& row : cells) {
      if (row.size() != checkpoints.size()) throw InvariantError("prediction matrix is not rectangular");
      for (const auto& c : row) {
        if (c.correct != (c.predicted == c.truth)) throw InvariantError("prediction cell correctness flag is wrong");
        if (c.phase == Phase::Two && !c.uses_additional())
          throw InvariantError("phase-two cell without an additional source");
      }
    }
  }
};

// Platt scaling: calibrated p = sigmoid(slope * logit(p) + intercept).
struct PlattScaling {
  double slope = 1.0;
  double intercept = 0.0;

  bool operator==(const PlattScaling&) const = default;

  double apply(double p) const {
    p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    return sigmoid(slope * std::log(p / (1.0 - p)) + intercept);
  }
};

// Smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2) keep the fit finite on
// separable data. Newton steps with backtracking on the mean log loss.
inline PlattScaling fit_platt(std::span<const double> probabilities, std::span<const Outcome> truth) {
  if (probabilities.size() != truth.size()) throw InvariantError("fit_platt: size mismatch");
  if (probabilities.empty()) throw InvariantError("fit_platt: no predictions");
  const std::size_t n = probabilities.size();
  const double positives = static_cast<double>(std::count(truth.begin(), truth.end(), Outcome::Success));
  const double negatives = static_cast<double>(n) - positives;
  const double hi = (positives + 1.0) / (positives + 2.0), lo = 1.0 / (negatives + 2.0);
  std::vector<double> z(n), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(probabilities[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    z[i] = std::log(p / (1.0 - p));
    t[i] = truth[i] == Outcome::Success ? hi : lo;
  }
  auto loss = [&](double a, double b) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = a * z[i] + b;
      // log(1 + e^m) - t m, computed stably
      total += std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))) - t[i] * m;
    }
    return total / static_cast<double>(n);
  };
  PlattScaling s{1.0, 0.0};
  double current = loss(s.slope, s.intercept);
  for (int iter = 0; iter < 100; ++iter) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double q = sigmoid(s.slope * z[i] + s.intercept);
      const double r = q - t[i], w = q * (1.0 - q);
      ga += r * z[i];
      gb += r;
      haa += w * z[i] * z[i];
      hab += w * z[i];
      hbb += w;
    }
    // Tiny ridge keeps the 2x2 system solvable when every z is equal.
    haa += 1e-12 * static_cast<double>(n);
    hbb += 1e-12 * static_cast<double>(n);
    const double det = haa * hbb - hab * hab;
    if (!(det > 0)) break;
    const double da = (hbb * ga - hab * gb) / det, db = (haa * gb - hab * ga) / det;
    double step = 1.0;
    bool improved = false;
    while (step > 1e-10) {
      const double a = s.slope - step * da, b = s.intercept - step * db;
      const double next = loss(a, b);
      if (next <= current) {
        improved = next < current;
        s = {a, b};
        current = next;
        break;
      }
      step /= 2;
    }
    if (!improved || std::abs(da) + std::abs(db) < 1e-12) break;
  }
  return s;
}

struct GateConfig {
  enum class Kind { ConfidenceThreshold };
  enum class Calibration { None, HoldoutTuned };

  struct Candidate {
    double threshold = 1.0;
    std::size_t correct = 0;
    std::size_t cells = 0;
    double accuracy = 0.0;
    double consumption = 1.0;
  };

  Kind kind = Kind::ConfidenceThreshold;
  double threshold = 1.0;
  Calibration calibration = Calibration::None;
  // Fitted on the tuning holdout when calibration is HoldoutTuned.
  PlattScaling platt;
  // Holdout results per candidate threshold when tuned.
  std::vector<Candidate> tuning;

  static void check_threshold(double theta) {
    if (!(theta > 0.5 && theta <= 1.0))
      throw ConfigError("gate threshold " + csv::format_double(theta) + " outside (0.5, 1]");
  }

  static GateConfig fixed(double theta) {
    check_threshold(theta);
    GateConfig g;
    g.threshold = theta;
    return g;
  }

  // Confidence the gate compares against the threshold. Only gating uses
  // it; recorded predictions keep the raw probability.
  double gate_confidence(const Prediction& p) const {
    if (calibration == Calibration::None) return p.confidence;
    const double q = platt.apply(p.p_success);
    return std::max(q, 1.0 - q);
  }

  bool fires_for(const Prediction& p) const { return fires(gate_confidence(p)); }

  // Phase 2 runs when the phase-1 confidence falls below the threshold.
  bool fires(double confidence) const { return confidence < threshold; }
};

struct Split {
  std::vector<StudentId> train;
  std::vector<StudentId> test;
};

// Stratified by final result (succeeded vs failed); both parts keep cohort order.
inline Split stratified_split(const SourceBundle& primary, const std::vector<StudentId>& cohort, double test_fraction,
                              std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must be in (0,1)");
  std::unordered_map<StudentId, bool> success;
  for (const auto& d : primary.demographics) success.emplace(d.student_id, is_success_result(d.final_result));
  std::vector<StudentId> strata[2];
  for (const auto& id : cohort) {
    auto it = success.find(id);
    if (it == success.end()) throw InvariantError("split: student " + id + " not in the primary source");
    strata[it->second ? 1 : 0].push_back(id);
  }
  Rng rng(seed);
  std::unordered_map<StudentId, bool> in_test;
  for (auto& s : strata) {
    auto shuffled = s;
    rng.shuffle(shuffled);
    auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(s.size())));
    for (std::size_t i = 0; i < shuffled.size(); ++i) in_test[shuffled[i]] = i < n_test;
  }
  Split split;
  for (const auto& id : cohort) (in_test[id] ? split.test : split.train).push_back(id);
  if (split.train.empty() || split.test.empty())
    throw DataError("cohort of " + std::to_string(cohort.size()) + " students is too small to split");
  return split;
}

struct PipelineOptions {
  double pass_threshold = 40.0;
  int jobs = 1;
};

struct CheckpointPredictions {
  int day = 0;
  std::vector<Outcome> truth;
  std::vector<Prediction> ss;
  std::vector<Prediction> ms;
};

// Per-checkpoint SS and MS predictions for the evaluated students. Every
// model is trained once per checkpoint on the training students; the three
// prediction matrices are assembled from these.
struct FittedCheckpoints {
  std::vector<StudentId> evaluated;
  CheckpointSchedule schedule;
  std::vector<SourceTag> additional_tags;
  std::vector<CheckpointPredictions> per_checkpoint;
  std::vector<std::string> warnings;
};

inline FittedCheckpoints fit_checkpoints(const SourceBundle& primary, std::span<const SourceBundle> additional,
                                         const CheckpointSchedule& schedule, const std::vector<StudentId>& train_ids,
                                         const std::vector<StudentId>& eval_ids, const Trainer& trainer,
                                         const PipelineOptions& options, bool with_ss = true, bool with_ms = true) {
  if (schedule.days.empty()) throw InvariantError("empty checkpoint schedule");
  if (train_ids.empty() || eval_ids.empty()) throw InvariantError("empty train or evaluation partition");
  if (with_ms && additional.empty()) throw InvariantError("multi-source model needs an additional source");

  FittedCheckpoints out;
  out.evaluated = eval_ids;
  out.schedule.origin = schedule.origin;
  for (const auto& a : additional) out.additional_tags.push_back(a.tag);

  std::vector<int> days;
  for (int day : schedule.days) {
    if (next_assessment(primary, day)) {
      days.push_back(day);
    } else {
      out.warnings.push_back("checkpoint day " + std::to_string(day) + " dropped: no later assessment to label");
      std::cerr << "warning: " << out.warnings.back() << '\n';
    }
  }
  if (days.empty()) throw DataError("no checkpoint has a later assessment to predict");
  out.schedule.days = days;

  std::vector<StudentId> everyone = train_ids;
  everyone.insert(everyone.end(), eval_ids.begin(), eval_ids.end());

  std::vector<FeatureMatrix> extra;
  for (const auto& a : additional) extra.push_back(featurize(a, 0, everyone));

  out.per_checkpoint.resize(days.size());
  parallel_for(days.size(), options.jobs, [&](std::size_t k) {
    const int day = days[k];
    const FeatureMatrix base = featurize(primary, day, everyone);
    const LabelVector labels = label_next_assessment(primary, day, everyone, options.pass_threshold);
    const LabelVector y_train = labels.select(train_ids);
    const LabelVector y_eval = labels.select(eval_ids);
    auto& slot = out.per_checkpoint[k];
    slot.day = day;
    slot.truth = y_eval.labels;
    if (with_ss) {
      auto model = trainer(base.select(train_ids), y_train);
      slot.ss = predict(*model, base.select(eval_ids));
    }
    if (with_ms) {
      std::vector<const FeatureMatrix*> parts{&base};
      for (const auto& e : extra) parts.push_back(&e);
      const FeatureMatrix combined = hconcat(parts);
      auto model = trainer(combined.select(train_ids), y_train);
      slot.ms = predict(*model, combined.select(eval_ids));
    }
  });
  return out;
}

namespace detail {

inline PredictionCell make_cell(const Prediction& p, Outcome truth, Phase phase, std::vector<SourceTag> sources) {
  return {p.predicted_class, truth, p.confidence, p.predicted_class == truth, phase, std::move(sources)};
}

inline PredictionMatrix empty_matrix(const FittedCheckpoints& fit) {
  PredictionMatrix m;
  m.student_ids = fit.evaluated;
  m.checkpoints = fit.schedule;
  m.cells.assign(fit.evaluated.size(), {});
  return m;
}

inline std::vector<SourceTag> all_sources(const FittedCheckpoints& fit) {
  std::vector<SourceTag> s{SourceTag::primary()};
  s.insert(s.end(), fit.additional_tags.begin(), fit.additional_tags.end());
  return s;
}

}  // namespace detail

inline PredictionMatrix assemble_ss(const FittedCheckpoints& fit) {
  auto m = detail::empty_matrix(fit);
  for (std::size_t i = 0; i < fit.evaluated.size(); ++i)
    for (const auto& cp : fit.per_checkpoint)
      m.cells[i].push_back(detail::make_cell(cp.ss.at(i), cp.truth[i], Phase::One, {SourceTag::primary()}));
  return m;
}

inline PredictionMatrix assemble_ms(const FittedCheckpoints& fit) {
  auto m = detail::empty_matrix(fit);
  const auto sources = detail::all_sources(fit);
  for (std::size_t i = 0; i < fit.evaluated.size(); ++i)
    for (const auto& cp : fit.per_checkpoint)
      m.cells[i].push_back(detail::make_cell(cp.ms.at(i), cp.truth[i], Phase::One, sources));
  return m;
}

// The multi-source model holds every additional source for every student from the start.
inline AcquisitionLedger full_ledger(const FittedCheckpoints& fit) {
  AcquisitionLedger ledger;
  for (const auto& id : fit.evaluated)
    for (auto tag : fit.additional_tags) ledger.acquire(id, tag, 0);
  return ledger;
}

// Gated combination, built serially in checkpoint order per student. Once a
// student has acquired the additional sources, every later checkpoint uses
// the multi-source prediction at no further cost.
inline std::pair<PredictionMatrix, AcquisitionLedger> assemble_fep(const FittedCheckpoints& fit,
                                                                   const GateConfig& gate) {
  GateConfig::check_threshold(gate.threshold);
  auto m = detail::empty_matrix(fit);
  AcquisitionLedger ledger;
  const auto sources = detail::all_sources(fit);
  for (std::size_t i = 0; i < fit.evaluated.size(); ++i) {
    const auto& id = fit.evaluated[i];
    for (std::size_t k = 0; k < fit.per_checkpoint.size(); ++k) {
      const auto& cp = fit.per_checkpoint[k];
      const auto& phase_one = cp.ss.at(i);
      if (ledger.holds_any(id) || gate.fires_for(phase_one)) {
        for (auto tag : fit.additional_tags) ledger.acquire(id, tag, static_cast<int>(k));
        m.cells[i].push_back(detail::make_cell(cp.ms.at(i), cp.truth[i], Phase::Two, sources));
      } else {
        m.cells[i].push_back(detail::make_cell(phase_one, cp.truth[i], Phase::One, {SourceTag::primary()}));
      }
    }
  }
  return {std::move(m), std::move(ledger)};
}

inline PredictionMatrix run_ss(const SourceBundle& primary, const CheckpointSchedule& schedule, const Split& split,
                               const Trainer& trainer, const PipelineOptions& options = {}) {
  auto fit = fit_checkpoints(primary, {}, schedule, split.train, split.test, trainer, options, true, false);
  return assemble_ss(fit);
}

inline PredictionMatrix run_ss(const SourceBundle& primary, const CheckpointSchedule& schedule, const Split& split,
                               const LearnerConfig& learner, const PipelineOptions& options = {}) {
  return run_ss(primary, schedule, split, boosted_trainer(learner), options);
}

inline PredictionMatrix run_ms(const SourceBundle& primary, std::span<const SourceBundle> additional,
                               const CheckpointSchedule& schedule, const Split& split, const Trainer& trainer,
                               const PipelineOptions& options = {}) {
  auto fit = fit_checkpoints(primary, additional, schedule, split.train, split.test, trainer, options, false, true);
  return assemble_ms(fit);
}

inline PredictionMatrix run_ms(const SourceBundle& primary, std::span<const SourceBundle> additional,
                               const CheckpointSchedule& schedule, const Split& split, const LearnerConfig& learner,
                               const PipelineOptions& options = {}) {
  return run_ms(primary, additional, schedule, split, boosted_trainer(learner), options);
}

inline std::pair<PredictionMatrix, AcquisitionLedger> run_fep(const SourceBundle& primary,
                                                              std::span<const SourceBundle> additional,
                                                              const CheckpointSchedule& schedule, const Split& split,
                                                              const Trainer& trainer, const GateConfig& gate,
                                                              const PipelineOptions& options = {}) {
  auto fit = fit_checkpoints(primary, additional, schedule, split.train, split.test, trainer, options);
  return assemble_fep(fit, gate);
}

inline std::pair<PredictionMatrix, AcquisitionLedger> run_fep(const SourceBundle& primary,
                                                              std::span<const SourceBundle> additional,
                                                              const CheckpointSchedule& schedule, const Split& split,
                                                              const LearnerConfig& learner, const GateConfig& gate,
                                                              const PipelineOptions& options = {}) {
  return run_fep(primary, additional, schedule, split, boosted_trainer(learner), gate, options);
}

// Scores every threshold on a holdout carved from the training students.
inline std::vector<GateConfig::Candidate> evaluate_gate_grid(const FittedCheckpoints& fit,
                                                             const std::vector<double>& grid,
                                                             const GateConfig& prototype = {}) {
  std::vector<GateConfig::Candidate> table;
  for (double theta : grid) {
    GateConfig gate = prototype;
    gate.threshold = theta;
    auto [matrix, ledger] = assemble_fep(fit, gate);
    GateConfig::Candidate c;
    c.threshold = theta;
    for (const auto& row : matrix.cells)
      for (const auto& cell : row) {
        c.correct += cell.correct;
        ++c.cells;
      }
    c.accuracy = c.cells ? static_cast<double>(c.correct) / static_cast<double>(c.cells) : 0.0;
    c.consumption = data_consumption(ledger, fit.evaluated);
    table.push_back(c);
  }
  return table;
}

// Picks the threshold with the highest holdout accuracy; ties go to the lower
// consumption, then to the earlier grid entry.
inline GateConfig tune_gate(const SourceBundle& primary, std::span<const SourceBundle> additional,
                            const CheckpointSchedule& schedule, const std::vector<StudentId>& train_ids,
                            const Trainer& trainer, const std::vector<double>& grid, std::uint64_t seed,
                            const PipelineOptions& options = {}, double holdout_fraction = 0.25,
                            GateConfig::Calibration calibration = GateConfig::Calibration::None) {
  if (grid.empty()) throw ConfigError("gate grid is empty");
  for (double theta : grid) GateConfig::check_threshold(theta);
  const Split inner = stratified_split(primary, train_ids, holdout_fraction, splitmix64(seed ^ 0x6a09e667f3bcc909ULL));
  const auto fit = fit_checkpoints(primary, additional, schedule, inner.train, inner.test, trainer, options);
  GateConfig prototype;
  prototype.calibration = calibration;
  if (calibration == GateConfig::Calibration::HoldoutTuned) {
    // Pooled over every holdout cell.
    std::vector<double> p;
    std::vector<Outcome> truth;
    for (const auto& cp : fit.per_checkpoint)
      for (std::size_t i = 0; i < cp.ss.size(); ++i) {
        p.push_back(cp.ss[i].p_success);
        truth.push_back(cp.truth[i]);
      }
    prototype.platt = fit_platt(p, truth);
  }
  auto table = evaluate_gate_grid(fit, grid, prototype);
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& a = table[i];
    const auto& b = table[best];
    if (a.correct > b.correct || (a.correct == b.correct && a.consumption < b.consumption)) best = i;
  }
  GateConfig gate = prototype;
  gate.threshold = table[best].threshold;
  gate.tuning = std::move(table);
  return gate;
}

inline GateConfig tune_gate(const SourceBundle& primary, std::span<const SourceBundle> additional,
                            const CheckpointSchedule& schedule, const std::vector<StudentId>& train_ids,
                            const LearnerConfig& learner, const std::vector<double>& grid, std::uint64_t seed,
                            const PipelineOptions& options = {}, double holdout_fraction = 0.25,
                            GateConfig::Calibration calibration = GateConfig::Calibration::None) {
  return tune_gate(primary, additional, schedule, train_ids, boosted_trainer(learner), grid, seed, options,
                   holdout_fraction, calibration);
}

// All three models over one split, sharing the trained per-checkpoint models.
struct ModelComparison {
  PredictionMatrix ss;
  PredictionMatrix ms;
  PredictionMatrix fep;
  AcquisitionLedger ss_ledger;
  AcquisitionLedger ms_ledger;
  AcquisitionLedger fep_ledger;
  GateConfig gate;
  std::vector<std::string> warnings;
};

inline ModelComparison compare_models(const SourceBundle& primary, std::span<const SourceBundle> additional,
                                      const CheckpointSchedule& schedule, const Split& split, const Trainer& trainer,
                                      const GateConfig& gate, const PipelineOptions& options = {}) {
  auto fit = fit_checkpoints(primary, additional, schedule, split.train, split.test, trainer, options);
  ModelComparison out;
  out.ss = assemble_ss(fit);
  out.ms = assemble_ms(fit);
  auto [fep, ledger] = assemble_fep(fit, gate);
  out.fep = std::move(fep);
  out.fep_ledger = std::move(ledger);
  out.ms_ledger = full_ledger(fit);
  out.gate = gate;
  out.warnings = fit.warnings;
  for (const auto* m : {&out.ss, &out.ms, &out.fep}) m->validate();
  return out;
}

// ---------------------------------------------------------------------------
// Export: one CSV per model.

inline std::string sources_label(const std::vector<SourceTag>& sources) {
  std::vector<std::string> names;
  for (auto s : sources) names.push_back(to_string(s));
  return join(names, "+");
}

inline void write_predictions_csv(std::ostream& out, const PredictionMatrix& m) {
  csv::write_row(out, {"student_id", "checkpoint_day", "predicted", "correct", "confidence", "phase", "sources"});
  for (std::size_t i = 0; i < m.student_ids.size(); ++i)
    for (std::size_t t = 0; t < m.checkpoints.size(); ++t) {
      const auto& c = m.cells[i][t];
      csv::write_row(out, {m.student_ids[i], std::to_string(m.checkpoints.days[t]), std::string(to_string(c.predicted)),
                           c.correct ? "1" : "0", csv::format_double(c.confidence),
                           c.phase == Phase::One ? "1" : "2", sources_label(c.sources_used)});
    }
}

inline void write_ledger_csv(std::ostream& out, const AcquisitionLedger& ledger, const CheckpointSchedule& schedule) {
  csv::write_row(out, {"student_id", "source", "acquired_at_checkpoint", "acquired_at_day"});
  for (const auto& [id, entries] : ledger.entries())
    for (const auto& e : entries)
      csv::write_row(out, {id, to_string(e.source), std::to_string(e.acquired_at),
                           std::to_string(schedule.days.at(static_cast<std::size_t>(e.acquired_at)))});
}

}  // namespace fep
