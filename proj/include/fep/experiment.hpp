#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fep/bundle.hpp"
#include "fep/common.hpp"
#include "fep/config.hpp"
#include "fep/csv.hpp"
#include "fep/features.hpp"
#include "fep/learner.hpp"
#include "fep/metrics.hpp"
#include "fep/oulad.hpp"
#include "fep/parallel.hpp"
#include "fep/pipeline.hpp"
#include "fep/report.hpp"
#include "fep/synthetic.hpp"

namespace fep {

namespace fs = std::filesystem;

inline const std::vector<double> kDefaultGateGrid = {0.500001, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0};

struct ExperimentConfig {
  std::optional<fs::path> oulad_dir;
  std::optional<SyntheticConfig> synthetic;
  // Fixes the synthetic draw across seeds; otherwise each seed draws its own data.
  std::optional<std::uint64_t> synthetic_seed;
  std::string course_id = "CCC";
  std::string semester_id = "2014J";
  std::optional<std::vector<int>> checkpoints;
  double pass_threshold = 40.0;
  double bad_row_fraction = 0.001;
  LearnerConfig learner;
  std::vector<double> gate_grid = kDefaultGateGrid;
  // A fixed threshold skips holdout tuning.
  std::optional<double> gate_threshold;
  GateConfig::Calibration calibration = GateConfig::Calibration::None;
  double holdout_fraction = 0.25;
  std::vector<std::uint64_t> seeds;
  double test_fraction = 0.2;
  fs::path output_dir;

  static ExperimentConfig from(const KeyValueFile& kv, const fs::path& base_dir) {
    std::set<std::string> allowed = {
        "data.oulad_dir",       "data.synthetic_spec",     "data.course_id",      "data.semester_id",
        "data.checkpoints",     "data.pass_threshold",     "data.bad_row_fraction",
        "learner.max_depth",    "learner.n_rounds",        "learner.learning_rate", "learner.lambda",
        "learner.min_child_weight", "learner.subsample",   "gate.grid",           "gate.threshold",  "gate.calibration",
        "gate.holdout_fraction", "run.seeds",              "run.test_fraction",   "run.output_dir",
        "synthetic.seed",       "manifest.format",         "manifest.software_version"};
    for (const auto& k : SyntheticConfig::keys()) allowed.insert("synthetic." + k);
    kv.reject_unknown(allowed);

    auto resolve = [&](const std::string& p) {
      fs::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };

    ExperimentConfig c;
    if (auto dir = kv.get_string("data.oulad_dir"); dir && !dir->empty()) c.oulad_dir = resolve(*dir);
    const auto spec = kv.get_string("data.synthetic_spec");
    const bool inline_synthetic = kv.has_section("synthetic");
    if (spec && !spec->empty() && inline_synthetic)
      throw ConfigError(kv.origin() + ": set either data.synthetic_spec or a [synthetic] section, not both");
    if (spec && !spec->empty()) c.synthetic = SyntheticConfig::from(KeyValueFile::load(resolve(*spec)));
    if (inline_synthetic) {
      c.synthetic = SyntheticConfig::from(kv, "synthetic");
      c.synthetic_seed = kv.get<std::uint64_t>("synthetic.seed");
    }
    if (c.oulad_dir.has_value() == c.synthetic.has_value())
      throw ConfigError(kv.origin() + ": exactly one of data.oulad_dir and a synthetic spec must be set");

    c.course_id = kv.get_string("data.course_id").value_or(c.course_id);
    c.semester_id = kv.get_string("data.semester_id").value_or(c.semester_id);
    c.checkpoints = kv.get_list<int>("data.checkpoints");
    c.pass_threshold = kv.get_or("data.pass_threshold", c.pass_threshold);
    c.bad_row_fraction = kv.get_or("data.bad_row_fraction", c.bad_row_fraction);
    if (!(c.bad_row_fraction >= 0 && c.bad_row_fraction < 1))
      throw ConfigError(kv.origin() + ": field 'data.bad_row_fraction' must be in [0,1)");

    c.learner.max_depth = kv.get_or("learner.max_depth", c.learner.max_depth);
    c.learner.n_rounds = kv.get_or("learner.n_rounds", c.learner.n_rounds);
    c.learner.learning_rate = kv.get_or("learner.learning_rate", c.learner.learning_rate);
    c.learner.lambda = kv.get_or("learner.lambda", c.learner.lambda);
    c.learner.min_child_weight = kv.get_or("learner.min_child_weight", c.learner.min_child_weight);
    c.learner.subsample = kv.get_or("learner.subsample", c.learner.subsample);
    c.learner.validate();

    if (auto grid = kv.get_list<double>("gate.grid")) c.gate_grid = *grid;
    if (c.gate_grid.empty()) throw ConfigError(kv.origin() + ": field 'gate.grid' is empty");
    for (double theta : c.gate_grid) GateConfig::check_threshold(theta);
    c.gate_threshold = kv.get<double>("gate.threshold");
    if (c.gate_threshold) GateConfig::check_threshold(*c.gate_threshold);
    if (auto cal = kv.get_string("gate.calibration")) {
      if (*cal == "holdout_tuned")
        c.calibration = GateConfig::Calibration::HoldoutTuned;
      else if (*cal != "none")
        throw ConfigError(kv.origin() + ": field 'gate.calibration' must be none or holdout_tuned, got '" + *cal + "'");
    }
    c.holdout_fraction = kv.get_or("gate.holdout_fraction", c.holdout_fraction);
    if (!(c.holdout_fraction > 0 && c.holdout_fraction < 1))
      throw ConfigError(kv.origin() + ": field 'gate.holdout_fraction' must be in (0,1)");

    auto seeds = kv.get_list<std::uint64_t>("run.seeds");
    if (!seeds || seeds->empty()) throw ConfigError(kv.origin() + ": field 'run.seeds' must list at least one seed");
    if (std::set<std::uint64_t>(seeds->begin(), seeds->end()).size() != seeds->size())
      throw ConfigError(kv.origin() + ": field 'run.seeds' has duplicates");
    c.seeds = *seeds;
    c.test_fraction = kv.get_or("run.test_fraction", c.test_fraction);
    if (!(c.test_fraction > 0 && c.test_fraction < 1))
      throw ConfigError(kv.origin() + ": field 'run.test_fraction' must be in (0,1)");
    c.output_dir = resolve(kv.require_string("run.output_dir"));
    return c;
  }

  static ExperimentConfig load(const fs::path& path) {
    return from(KeyValueFile::load(path), fs::absolute(path).parent_path());
  }

  // Fully resolved configuration; loading it reruns the same experiment.
  std::string to_manifest() const {
    std::ostringstream out;
    auto list = [](const auto& values) {
      std::vector<std::string> s;
      for (auto v : values) {
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
          s.push_back(csv::format_double(v));
        else
          s.push_back(std::to_string(v));
      }
      return join(s, ",");
    };
    out << "[manifest]\nformat = 1\nsoftware_version = " << kVersion << "\n\n";
    out << "[data]\n";
    if (oulad_dir) out << "oulad_dir = " << fs::absolute(*oulad_dir).lexically_normal().string() << '\n';
    out << "course_id = " << course_id << "\nsemester_id = " << semester_id << '\n';
    if (checkpoints) out << "checkpoints = " << list(*checkpoints) << '\n';
    out << "pass_threshold = " << csv::format_double(pass_threshold) << '\n';
    out << "bad_row_fraction = " << csv::format_double(bad_row_fraction) << "\n\n";
    if (synthetic) {
      out << synthetic->to_text("synthetic");
      if (synthetic_seed) out << "seed = " << *synthetic_seed << '\n';
      out << '\n';
    }
    out << "[learner]\nmax_depth = " << learner.max_depth << "\nn_rounds = " << learner.n_rounds
        << "\nlearning_rate = " << csv::format_double(learner.learning_rate)
        << "\nlambda = " << csv::format_double(learner.lambda)
        << "\nmin_child_weight = " << csv::format_double(learner.min_child_weight)
        << "\nsubsample = " << csv::format_double(learner.subsample) << "\n\n";
    out << "[gate]\ngrid = " << list(gate_grid) << '\n';
    if (gate_threshold) out << "threshold = " << csv::format_double(*gate_threshold) << '\n';
    out << "calibration = " << (calibration == GateConfig::Calibration::HoldoutTuned ? "holdout_tuned" : "none") << '\n';
    out << "holdout_fraction = " << csv::format_double(holdout_fraction) << "\n\n";
    out << "[run]\nseeds = " << list(seeds) << "\ntest_fraction = " << csv::format_double(test_fraction)
        << "\noutput_dir = " << fs::absolute(output_dir).lexically_normal().string() << '\n';
    return out.str();
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MetricsReport> reports;  // SS, MS, FEP
  ModelComparison comparison;
  CheckpointSchedule schedule;
  std::size_t cohort_size = 0;
  std::vector<std::string> feature_names;
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  std::optional<oulad::CohortCounts> cohort;
  std::optional<CheckpointSchedule> derived_schedule;
};

namespace detail {

struct PreparedData {
  SourceBundle primary;
  std::vector<SourceBundle> additional;
  std::vector<StudentId> cohort;
};

inline SeedResult run_seed(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  r.cohort_size = data.cohort.size();
  r.schedule = cfg.checkpoints ? CheckpointSchedule::explicit_days(*cfg.checkpoints, data.primary.course_length_days)
                               : derive_schedule(data.primary);
  const Split split = stratified_split(data.primary, data.cohort, cfg.test_fraction, seed);
  LearnerConfig learner = cfg.learner;
  learner.seed = seed;
  const Trainer trainer = boosted_trainer(learner);
  PipelineOptions options;
  options.pass_threshold = cfg.pass_threshold;
  // A fixed threshold still needs the holdout when calibration is fitted there.
  const bool tuned = !cfg.gate_threshold || cfg.calibration != GateConfig::Calibration::None;
  const GateConfig gate =
      tuned ? tune_gate(data.primary, data.additional, r.schedule, split.train, trainer,
                        cfg.gate_threshold ? std::vector<double>{*cfg.gate_threshold} : cfg.gate_grid, seed, options,
                        cfg.holdout_fraction, cfg.calibration)
            : GateConfig::fixed(*cfg.gate_threshold);
  r.comparison = compare_models(data.primary, data.additional, r.schedule, split, trainer, gate, options);
  r.schedule = r.comparison.ss.checkpoints;
  r.reports.push_back(evaluate("SS", r.comparison.ss, r.comparison.ss_ledger));
  r.reports.push_back(evaluate("MS", r.comparison.ms, r.comparison.ms_ledger));
  r.reports.push_back(evaluate("FEP", r.comparison.fep, r.comparison.fep_ledger));
  const auto& ss_c = r.reports[0].consumption;
  const auto& fep_c = r.reports[2].consumption;
  const auto& ms_c = r.reports[1].consumption;
  if (!(ss_c <= fep_c && fep_c <= ms_c)) throw InvariantError("consumption ordering SS <= FEP <= MS violated");
  r.feature_names = feature_names(data.primary);
  for (const auto& a : data.additional) {
    auto names = feature_names(a);
    r.feature_names.insert(r.feature_names.end(), names.begin(), names.end());
  }
  return r;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

template <class F>
void write_file(const fs::path& path, F&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  fn(out);
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace detail

// Runs every seed, writes per-seed outputs, the aggregate, plot data and the manifest.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, int jobs, std::ostream& log) {
  ExperimentResult result;
  std::vector<detail::PreparedData> per_seed_data;
  std::optional<detail::PreparedData> shared;
  std::ostringstream data_report;

  if (cfg.oulad_dir) {
    oulad::LoadOptions load_options;
    load_options.bad_row_fraction = cfg.bad_row_fraction;
    log << "loading OULAD from " << cfg.oulad_dir->string() << '\n';
    const auto tables = oulad::load_oulad(*cfg.oulad_dir, load_options);
    for (const auto& [file, rows] : tables.row_counts) log << "  " << file << ": " << rows << " rows\n";
    if (!tables.rejected.empty()) log << "  rejected rows: " << tables.rejected.size() << '\n';
    auto full = oulad::build_primary_source(tables, cfg.course_id, cfg.semester_id);
    auto additional = oulad::build_additional_source(tables, full);
    detail::PreparedData d;
    d.cohort = additional.student_ids();
    d.primary = restrict_to(full, d.cohort);
    d.additional.push_back(std::move(additional));
    result.cohort = oulad::count_cohort(d.primary, d.cohort);
    result.derived_schedule = derive_schedule(d.primary);

    data_report << "source: OULAD " << cfg.course_id << "-" << cfg.semester_id << '\n';
    data_report << "registered students: " << full.demographics.size() << '\n';
    data_report << "cohort with a completed prior course: " << result.cohort->students << " ("
                << result.cohort->succeeded << " succeeded, " << result.cohort->failed << " failed)\n";
    data_report << "published cohort: " << oulad::kPublishedCohortSize << " (" << oulad::kPublishedSucceeded
                << " succeeded, " << oulad::kPublishedFailed << " failed)\n";
    if (result.cohort->students != static_cast<std::size_t>(oulad::kPublishedCohortSize) ||
        result.cohort->succeeded != static_cast<std::size_t>(oulad::kPublishedSucceeded))
      data_report << "cohort delta: " << static_cast<long>(result.cohort->students) - oulad::kPublishedCohortSize
                  << " students. Filter used: prior course-presentation ended (start + length) strictly before "
                     "the primary start; registration not withdrawn before its first deadline; latest end wins, "
                     "ties by course id; succeeded = Pass or Distinction, failed = Fail or Withdrawn.\n";
    std::vector<std::string> derived, published;
    for (int d2 : result.derived_schedule->days) derived.push_back(std::to_string(d2));
    for (int d2 : oulad::kPublishedCheckpointDays) published.push_back(std::to_string(d2));
    data_report << "derived checkpoint days: " << join(derived, ",") << '\n';
    data_report << "published checkpoint days: " << join(published, ",") << '\n';
    shared = std::move(d);
  } else {
    data_report << "source: synthetic benchmark\n" << cfg.synthetic->to_text("");
    for (auto seed : cfg.seeds) {
      auto syn = generate_synthetic(*cfg.synthetic, cfg.synthetic_seed.value_or(seed));
      detail::PreparedData d;
      d.cohort = syn.primary.student_ids();
      d.primary = std::move(syn.primary);
      d.additional.push_back(std::move(syn.additional));
      per_seed_data.push_back(std::move(d));
    }
  }

  result.seeds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    const auto& data = shared ? *shared : per_seed_data[i];
    result.seeds[i] = detail::run_seed(cfg, data, cfg.seeds[i]);
  });

  fs::create_directories(cfg.output_dir);
  for (const auto& r : result.seeds) {
    const auto dir = cfg.output_dir / detail::seed_dir_name(r.seed);
    fs::create_directories(dir);
    detail::write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, r.reports); });
    detail::write_file(dir / "predictions_ss.csv", [&](std::ostream& o) { write_predictions_csv(o, r.comparison.ss); });
    detail::write_file(dir / "predictions_ms.csv", [&](std::ostream& o) { write_predictions_csv(o, r.comparison.ms); });
    detail::write_file(dir / "predictions_fep.csv",
                       [&](std::ostream& o) { write_predictions_csv(o, r.comparison.fep); });
    detail::write_file(dir / "ledger_fep.csv",
                       [&](std::ostream& o) { write_ledger_csv(o, r.comparison.fep_ledger, r.comparison.fep.checkpoints); });
    detail::write_file(dir / "gate.csv", [&](std::ostream& o) {
      const auto& g = r.comparison.gate;
      const bool calibrated = g.calibration == GateConfig::Calibration::HoldoutTuned;
      const std::string slope = calibrated ? csv::format_double(g.platt.slope) : "";
      const std::string intercept = calibrated ? csv::format_double(g.platt.intercept) : "";
      csv::write_row(o, {"threshold", "holdout_accuracy", "holdout_consumption", "chosen", "platt_slope",
                         "platt_intercept"});
      if (g.tuning.empty()) csv::write_row(o, {csv::format_double(g.threshold), "", "", "1", slope, intercept});
      for (const auto& c : g.tuning)
        csv::write_row(o, {csv::format_double(c.threshold), csv::format_double(c.accuracy),
                           csv::format_double(c.consumption), c.threshold == g.threshold ? "1" : "0", slope,
                           intercept});
    });
  }

  // Aggregate across seeds, grouped by (model, checkpoint index).
  const auto& first = result.seeds.front();
  for (const auto& r : result.seeds)
    if (r.schedule.days != first.schedule.days)
      throw InvariantError("seeds produced different checkpoint schedules; cannot aggregate");
  detail::write_file(cfg.output_dir / "aggregate.csv", [&](std::ostream& o) {
    csv::write_row(o, {"model", "checkpoint_day", "metric", "mean", "std", "n"});
    for (std::size_t m = 0; m < first.reports.size(); ++m) {
      const auto& name = first.reports[m].model;
      for (std::size_t t = 0; t < first.schedule.size(); ++t) {
        std::map<std::string, std::vector<double>> values;
        for (const auto& r : result.seeds) {
          const auto& c = r.reports[m].checkpoints[t];
          values["accuracy"].push_back(c.accuracy);
          values["earliness"].push_back(c.earliness);
          values["stability"].push_back(c.stability);
          values["ess"].push_back(c.ess);
        }
        for (const char* metric : {"accuracy", "earliness", "stability", "ess"})
          csv::write_row(o, {name, std::to_string(first.schedule.days[t]), metric,
                             csv::format_double(detail::mean_of(values[metric])),
                             csv::format_double(detail::std_of(values[metric])),
                             std::to_string(values[metric].size())});
      }
      std::vector<double> consumption;
      for (const auto& r : result.seeds) consumption.push_back(r.reports[m].consumption);
      csv::write_row(o, {name, "all", "consumption", csv::format_double(detail::mean_of(consumption)),
                         csv::format_double(detail::std_of(consumption)), std::to_string(consumption.size())});
    }
  });
  detail::write_file(cfg.output_dir / "plot_ess.csv", [&](std::ostream& o) {
    csv::write_row(o, {"checkpoint_day", "model", "ess_mean", "ess_std"});
    for (std::size_t t = 0; t < first.schedule.size(); ++t)
      for (std::size_t m = 0; m < first.reports.size(); ++m) {
        std::vector<double> v;
        for (const auto& r : result.seeds) v.push_back(r.reports[m].checkpoints[t].ess);
        csv::write_row(o, {std::to_string(first.schedule.days[t]), first.reports[m].model,
                           csv::format_double(detail::mean_of(v)), csv::format_double(detail::std_of(v))});
      }
  });
  data_report << "features (" << first.feature_names.size() << "): " << join(first.feature_names, ", ") << '\n';
  detail::write_text(cfg.output_dir / "data_report.txt", data_report.str());
  detail::write_text(cfg.output_dir / "manifest.ini", cfg.to_manifest());
  log << "wrote " << result.seeds.size() << " seed report(s) to " << cfg.output_dir.string() << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// Report rendering.

inline std::string ordinal(int n) {
  const int tens = n % 100;
  const char* suffix = "th";
  if (tens < 11 || tens > 13) {
    switch (n % 10) {
      case 1: suffix = "st"; break;
      case 2: suffix = "nd"; break;
      case 3: suffix = "rd"; break;
      default: break;
    }
  }
  return std::to_string(n) + suffix;
}

struct AggregateRow {
  std::string model;
  std::string checkpoint;
  std::string metric;
  double mean = 0;
  double std = 0;
  std::size_t n = 0;
};

inline std::vector<AggregateRow> read_aggregate(const fs::path& path) {
  auto reader = csv::Reader::from_file(path.string());
  std::vector<std::string> f;
  std::size_t line = 0;
  if (!reader.next(f, line) || f != std::vector<std::string>{"model", "checkpoint_day", "metric", "mean", "std", "n"})
    throw DataError(path.string() + ": unexpected header");
  std::vector<AggregateRow> rows;
  while (reader.next(f, line)) {
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 6) throw DataError(path.string() + ":" + std::to_string(line) + ": expected 6 fields");
    auto mean = csv::parse_number<double>(f[3]);
    auto sd = csv::parse_number<double>(f[4]);
    auto n = csv::parse_number<std::size_t>(f[5]);
    if (!mean || !sd || !n) throw DataError(path.string() + ":" + std::to_string(line) + ": bad number");
    rows.push_back({f[0], f[1], f[2], *mean, *sd, *n});
  }
  return rows;
}

// Tables of accuracy and ESS (rows = models, columns = checkpoint days) and
// the consumption line.
inline void render_report(const fs::path& run_dir, std::ostream& out) {
  if (!fs::is_directory(run_dir)) throw DataError("run directory " + run_dir.string() + " does not exist");
  const auto manifest_path = run_dir / "manifest.ini";
  if (!fs::exists(manifest_path)) throw DataError("incomplete run: missing manifest.ini in " + run_dir.string());
  const auto manifest = KeyValueFile::load(manifest_path);
  auto seeds = manifest.get_list<std::uint64_t>("run.seeds");
  if (!seeds) throw DataError("incomplete run: manifest.ini lists no seeds");
  for (auto seed : *seeds) {
    auto p = run_dir / detail::seed_dir_name(seed) / "metrics.csv";
    if (!fs::exists(p)) throw DataError("incomplete run: missing " + detail::seed_dir_name(seed) + "/metrics.csv");
  }
  const auto aggregate_path = run_dir / "aggregate.csv";
  if (!fs::exists(aggregate_path)) throw DataError("incomplete run: missing aggregate.csv in " + run_dir.string());
  const auto rows = read_aggregate(aggregate_path);

  std::vector<std::string> models;
  std::vector<int> days;
  std::map<std::tuple<std::string, std::string, int>, const AggregateRow*> cell;
  std::map<std::string, double> consumption;
  std::size_t n_seeds = 0;
  for (const auto& r : rows) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    n_seeds = std::max(n_seeds, r.n);
    if (r.checkpoint == "all") {
      if (r.metric == "consumption") consumption[r.model] = r.mean;
      continue;
    }
    auto day = csv::parse_number<int>(r.checkpoint);
    if (!day) throw DataError("aggregate.csv: bad checkpoint '" + r.checkpoint + "'");
    if (std::find(days.begin(), days.end(), *day) == days.end()) days.push_back(*day);
    cell[{r.model, r.metric, *day}] = &r;
  }

  auto table = [&](const std::string& title, const std::string& metric) {
    out << title << " (mean over " << n_seeds << " seed" << (n_seeds == 1 ? "" : "s") << ", std below)\n";
    out << std::left << std::setw(12) << "Periods";
    for (int d : days) out << std::right << std::setw(7) << ordinal(d);
    out << '\n';
    for (const auto& m : models) {
      out << std::left << std::setw(12) << (m + " Model");
      for (int d : days) {
        auto it = cell.find({m, metric, d});
        out << std::right << std::setw(7) << (it == cell.end() ? "-" : csv::format_fixed(it->second->mean, 2));
      }
      out << '\n' << std::left << std::setw(12) << "";
      for (int d : days) {
        auto it = cell.find({m, metric, d});
        // "±" is two bytes; pad by display width.
        const std::string v = it == cell.end() ? "" : csv::format_fixed(it->second->std, 2);
        out << std::string(v.size() < 6 ? 6 - v.size() : 0, ' ') << (v.empty() ? " " : "±") << v;
      }
      out << '\n';
    }
    out << '\n';
  };
  table("Accuracy", "accuracy");
  table("ESS", "ess");

  out << "Data consumption:";
  bool first = true;
  for (const auto& m : models) {
    if (!consumption.count(m)) continue;
    out << (first ? " " : ", ") << m << ' ' << format_consumption(consumption[m]);
    first = false;
  }
  if (consumption.count("MS") && consumption.count("FEP"))
    out << ", reduction " << consumption_reduction_percent(consumption["MS"], consumption["FEP"]) << '%';
  out << '\n';

  const auto data_report = run_dir / "data_report.txt";
  if (fs::exists(data_report)) {
    std::ifstream in(data_report);
    std::string line;
    out << '\n';
    while (std::getline(in, line))
      if (line.rfind("features", 0) != 0) out << line << '\n';
  }
}

// ---------------------------------------------------------------------------
// Command entry points; each returns the process exit status.

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInvariant = 4;

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvariantError& e) {
    err << "invariant breach: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

inline int cmd_run(const fs::path& config_path, int jobs, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    if (jobs < 1) throw ConfigError("--jobs must be at least 1");
    const auto cfg = ExperimentConfig::load(config_path);
    run_experiment(cfg, jobs, log);
  });
}

inline int cmd_report(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] { render_report(run_dir, out); });
}

// Writes primary.bundle, additional.bundle and schema.txt into `out_dir`.
inline int cmd_synth(const fs::path& spec_path, std::uint64_t seed, const fs::path& out_dir, std::ostream& err) {
  return guarded(err, [&] {
    const auto spec = SyntheticConfig::from(KeyValueFile::load(spec_path));
    const auto data = generate_synthetic(spec, seed);
    fs::create_directories(out_dir);
    save_bundle(out_dir / "primary.bundle", data.primary);
    save_bundle(out_dir / "additional.bundle", data.additional);
    detail::write_text(out_dir / "schema.txt", std::string(kBundleSchemaDoc) + "\nGenerated with seed " +
                                                   std::to_string(seed) + " from:\n" + spec.to_text(""));
  });
}

}  // namespace fep
