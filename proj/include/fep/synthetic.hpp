#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fep/bundle.hpp"
#include "fep/common.hpp"
#include "fep/config.hpp"
#include "fep/oulad.hpp"
#include "fep/rng.hpp"

namespace fep {

// Parameters of the two-source synthetic benchmark.
//
// Each student has an integer ability level in [0, ability_levels). Every
// assessment has a half-integer pass threshold near the middle of the range;
// a student passes iff their level exceeds it. The primary source exposes
// the level through daily click counts distorted by a per-student Gaussian
// error of sd `primary_noise`, and through past pass/fail scores. The
// additional source exposes `additional_signal * (level - centre)` plus unit
// Gaussian noise, but only for boundary students (|level - centre| <=
// boundary_width); for everyone else it is pure noise.
struct SyntheticConfig {
  int n_students = 1000;
  int n_checkpoints = 8;
  int course_length_days = 270;
  double primary_noise = 3.0;
  double additional_signal = 2.0;
  int ability_levels = 20;
  double threshold_spread = 3.0;
  double boundary_width = 5.0;

  bool operator==(const SyntheticConfig&) const = default;

  void validate() const {
    if (n_students <= 0) throw ConfigError("synthetic: n_students must be positive");
    if (n_checkpoints < 2) throw ConfigError("synthetic: n_checkpoints must be at least 2");
    if (course_length_days <= n_checkpoints + 1)
      throw ConfigError("synthetic: course_length_days must exceed n_checkpoints + 1");
    if (ability_levels < 4) throw ConfigError("synthetic: ability_levels must be at least 4");
    if (!(primary_noise >= 0)) throw ConfigError("synthetic: primary_noise must be non-negative");
    if (!(additional_signal >= 0)) throw ConfigError("synthetic: additional_signal must be non-negative");
    if (!(threshold_spread >= 0)) throw ConfigError("synthetic: threshold_spread must be non-negative");
    if (!(boundary_width >= 0)) throw ConfigError("synthetic: boundary_width must be non-negative");
  }

  // Reads keys under `section` ("" for top level).
  static SyntheticConfig from(const KeyValueFile& kv, const std::string& section = "") {
    auto key = [&](const char* k) { return section.empty() ? std::string(k) : section + "." + k; };
    if (section.empty()) {
      auto names = keys();
      kv.reject_unknown({names.begin(), names.end()});
    }
    SyntheticConfig c;
    c.n_students = kv.get_or(key("n_students"), c.n_students);
    c.n_checkpoints = kv.get_or(key("n_checkpoints"), c.n_checkpoints);
    c.course_length_days = kv.get_or(key("course_length_days"), c.course_length_days);
    c.primary_noise = kv.get_or(key("primary_noise"), c.primary_noise);
    c.additional_signal = kv.get_or(key("additional_signal"), c.additional_signal);
    c.ability_levels = kv.get_or(key("ability_levels"), c.ability_levels);
    c.threshold_spread = kv.get_or(key("threshold_spread"), c.threshold_spread);
    c.boundary_width = kv.get_or(key("boundary_width"), c.boundary_width);
    c.validate();
    return c;
  }

  static std::vector<std::string> keys() {
    return {"n_students",       "n_checkpoints",  "course_length_days", "primary_noise",
            "additional_signal", "ability_levels", "threshold_spread",   "boundary_width"};
  }

  std::string to_text(const std::string& section = "synthetic") const {
    std::ostringstream out;
    if (!section.empty()) out << '[' << section << "]\n";
    out << "n_students = " << n_students << '\n'
        << "n_checkpoints = " << n_checkpoints << '\n'
        << "course_length_days = " << course_length_days << '\n'
        << "primary_noise = " << csv::format_double(primary_noise) << '\n'
        << "additional_signal = " << csv::format_double(additional_signal) << '\n'
        << "ability_levels = " << ability_levels << '\n'
        << "threshold_spread = " << csv::format_double(threshold_spread) << '\n'
        << "boundary_width = " << csv::format_double(boundary_width) << '\n';
    return out.str();
  }
};

struct SyntheticData {
  SourceBundle primary;
  SourceBundle additional;
  // Latent ability level per student, in demographics order (test access only).
  std::vector<int> ability;
  // Pass threshold per assessment, in catalog order.
  std::vector<double> thresholds;
};

inline SyntheticData generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int n = config.n_students;
  const int T = config.n_checkpoints;
  const int length = config.course_length_days;
  const double centre = (config.ability_levels - 1) / 2.0;

  SyntheticData data;
  auto& primary = data.primary;
  primary.tag = SourceTag::primary();
  primary.course_id = "SYN";
  primary.semester_id = "2014J";
  primary.course_length_days = length;
  primary.vocabulary = {oulad::kGenders,      oulad::kRegions,       oulad::kHighestEducation,
                        oulad::kAgeBands,     oulad::kFinalResults, {"forumng", "resource"}};

  // T graded assessments whose deadlines become the checkpoints, then a final exam.
  for (int j = 0; j <= T; ++j) {
    double u = rng.uniform();
    double t = std::floor(centre + config.threshold_spread * (2.0 * u - 1.0)) + 0.5;
    t = std::clamp(t, 0.5, config.ability_levels - 1.5);
    data.thresholds.push_back(t);
    bool is_final = j == T;
    int deadline = is_final ? length : static_cast<int>(std::lround(double(j + 1) * length / (T + 1)));
    char id[16];
    std::snprintf(id, sizeof id, is_final ? "EXAM" : "A%02d", j + 1);
    primary.catalog.push_back({id, is_final ? "Exam" : "TMA", deadline, 100.0 / (T + 1), is_final});
  }

  auto& additional = data.additional;
  additional.tag = SourceTag::additional(0);
  additional.course_id = "prior";
  additional.semester_id = "prior";
  additional.course_length_days = 100;
  additional.vocabulary = primary.vocabulary;
  additional.vocabulary.activity_types = {"resource"};
  additional.catalog.push_back({"PRIOR_EXAM", "Exam", 100, 100.0, true});

  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "S%05d", i + 1);
    const StudentId id = buf;
    const int level = static_cast<int>(rng.below(static_cast<std::size_t>(config.ability_levels)));
    data.ability.push_back(level);
    const double primary_view = level + config.primary_noise * rng.normal();
    const bool boundary = std::abs(level - centre) <= config.boundary_width;
    const double additional_view = (boundary ? config.additional_signal * (level - centre) : 0.0) + rng.normal();

    StudentDemographics demo;
    demo.student_id = id;
    demo.gender = oulad::kGenders[rng.below(oulad::kGenders.size())];
    demo.region = oulad::kRegions[rng.below(oulad::kRegions.size())];
    demo.highest_education = oulad::kHighestEducation[rng.below(oulad::kHighestEducation.size())];
    demo.age_band = oulad::kAgeBands[rng.below(oulad::kAgeBands.size())];
    demo.disability = rng.uniform() < 0.1;
    demo.num_prev_attempts = 0;
    demo.final_result = level > centre ? "Pass" : "Fail";
    primary.demographics.push_back(demo);

    const int daily = std::max(0, static_cast<int>(std::lround(4.0 * (primary_view + config.ability_levels / 2.0))));
    for (int day = 0; day < length; ++day) {
      if (daily > 0) primary.events.push_back({id, "resource", day, daily});
      if (rng.uniform() < 0.2) primary.events.push_back({id, "forumng", day, 1 + static_cast<int>(rng.below(5))});
    }
    for (std::size_t j = 0; j < primary.catalog.size(); ++j) {
      const auto& a = primary.catalog[j];
      const bool pass = level > data.thresholds[j];
      const double u = rng.uniform();
      const double score = std::round(pass ? 50.0 + 40.0 * u : 30.0 * u);
      const int submitted = std::max(0, a.deadline_day - static_cast<int>(rng.below(3)));
      primary.assessments.push_back({id, a.assessment_id, a.deadline_day, submitted, score, a.weight});
    }

    StudentDemographics prior = demo;
    prior.final_result = additional_view > 0 ? "Pass" : "Fail";
    additional.demographics.push_back(prior);
    additional.origin.emplace(id, "PRIOR-2014B");
    const int prior_daily = std::max(0, static_cast<int>(std::lround(50.0 + 5.0 * additional_view)));
    for (int day = 0; day < additional.course_length_days; day += 2)
      if (prior_daily > 0) additional.events.push_back({id, "resource", day, prior_daily});
    const double prior_score = std::clamp(std::round(50.0 + 5.0 * additional_view), 0.0, 100.0);
    additional.assessments.push_back({id, "PRIOR_EXAM", 100, 98, prior_score, 100.0});
  }
  primary.validate();
  additional.validate();
  return data;
}

}  // namespace fep
