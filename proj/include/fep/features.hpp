#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "fep/bundle.hpp"
#include "fep/common.hpp"
#include "fep/csv.hpp"

namespace fep {

struct CheckpointSchedule {
  enum class Origin { AssessmentDeadlines, Explicit };

  std::vector<int> days;
  Origin origin = Origin::AssessmentDeadlines;

  std::size_t size() const { return days.size(); }
  bool operator==(const CheckpointSchedule&) const = default;

  static CheckpointSchedule explicit_days(std::vector<int> days, int course_length_days) {
    if (days.size() < 2) throw ConfigError("checkpoint schedule needs at least 2 days");
    for (std::size_t i = 0; i < days.size(); ++i) {
      if (days[i] < 0 || days[i] > course_length_days)
        throw ConfigError("checkpoint day " + std::to_string(days[i]) + " outside [0, " +
                          std::to_string(course_length_days) + "]");
      if (i && days[i] <= days[i - 1]) throw ConfigError("checkpoint days must be strictly increasing");
    }
    return {std::move(days), Origin::Explicit};
  }
};

// Distinct deadline days of the non-final assessments, ascending.
inline CheckpointSchedule derive_schedule(const SourceBundle& primary) {
  std::set<int> days;
  for (const auto& a : primary.catalog)
    if (!a.is_final && a.deadline_day >= 0 && a.deadline_day <= primary.course_length_days)
      days.insert(a.deadline_day);
  if (days.size() < 2)
    throw DataError("course " + primary.course_id + "-" + primary.semester_id + " yields " +
                    std::to_string(days.size()) + " checkpoint(s); at least 2 are required");
  return {std::vector<int>(days.begin(), days.end()), CheckpointSchedule::Origin::AssessmentDeadlines};
}

// Dense students x features matrix; missing cells hold kMissing.
struct FeatureMatrix {
  std::vector<StudentId> student_ids;
  std::vector<std::string> feature_names;
  std::vector<double> values;  // row-major
  int checkpoint_day = 0;
  std::vector<SourceTag> sources_included;
  // Rows for students absent from a source (every cell missing).
  std::vector<bool> absent;

  std::size_t rows() const { return student_ids.size(); }
  std::size_t cols() const { return feature_names.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t c = 0; c < feature_names.size(); ++c)
      if (feature_names[c] == name) return c;
    return std::nullopt;
  }

  // Rows for `ids`, in that order.
  FeatureMatrix select(const std::vector<StudentId>& ids) const {
    std::unordered_map<StudentId, std::size_t> index;
    for (std::size_t r = 0; r < rows(); ++r) index.emplace(student_ids[r], r);
    FeatureMatrix out;
    out.feature_names = feature_names;
    out.checkpoint_day = checkpoint_day;
    out.sources_included = sources_included;
    out.values.reserve(ids.size() * cols());
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end()) throw InvariantError("feature matrix has no row for student " + id);
      auto r = row(it->second);
      out.values.insert(out.values.end(), r.begin(), r.end());
      out.student_ids.push_back(id);
      out.absent.push_back(absent[it->second]);
    }
    return out;
  }
};

// Column-wise concatenation of matrices over the same students.
inline FeatureMatrix hconcat(const std::vector<const FeatureMatrix*>& parts) {
  if (parts.empty()) throw InvariantError("hconcat of nothing");
  FeatureMatrix out;
  out.student_ids = parts.front()->student_ids;
  out.checkpoint_day = parts.front()->checkpoint_day;
  out.absent.assign(out.student_ids.size(), false);
  for (const auto* p : parts) {
    if (p->student_ids != out.student_ids) throw InvariantError("hconcat: student order differs");
    out.feature_names.insert(out.feature_names.end(), p->feature_names.begin(), p->feature_names.end());
    out.sources_included.insert(out.sources_included.end(), p->sources_included.begin(), p->sources_included.end());
  }
  out.values.reserve(out.student_ids.size() * out.feature_names.size());
  for (std::size_t r = 0; r < out.student_ids.size(); ++r)
    for (const auto* p : parts) {
      auto row = p->row(r);
      out.values.insert(out.values.end(), row.begin(), row.end());
    }
  return out;
}

struct LabelVector {
  std::vector<StudentId> student_ids;
  std::vector<Outcome> labels;
  std::string target_assessment_id;

  std::size_t size() const { return labels.size(); }

  LabelVector select(const std::vector<StudentId>& ids) const {
    std::unordered_map<StudentId, std::size_t> index;
    for (std::size_t i = 0; i < student_ids.size(); ++i) index.emplace(student_ids[i], i);
    LabelVector out;
    out.target_assessment_id = target_assessment_id;
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end()) throw InvariantError("label vector has no entry for student " + id);
      out.student_ids.push_back(id);
      out.labels.push_back(labels[it->second]);
    }
    return out;
  }
};

namespace detail {

struct StudentSlices {
  std::unordered_map<StudentId, std::vector<const InteractionEvent*>> events;
  std::unordered_map<StudentId, std::vector<const AssessmentRecord*>> records;
  std::unordered_map<StudentId, const StudentDemographics*> demographics;

  explicit StudentSlices(const SourceBundle& b) {
    for (const auto& d : b.demographics) demographics.emplace(d.student_id, &d);
    for (const auto& e : b.events) events[e.student_id].push_back(&e);
    for (const auto& r : b.assessments) records[r.student_id].push_back(&r);
  }

  template <class T>
  static const std::vector<const T*>& of(const std::unordered_map<StudentId, std::vector<const T*>>& m,
                                         const StudentId& id) {
    static const std::vector<const T*> empty;
    auto it = m.find(id);
    return it == m.end() ? empty : it->second;
  }
};

inline void one_hot(std::vector<std::string>& names, const std::string& prefix, const char* field,
                    const std::vector<std::string>& vocab) {
  for (const auto& v : vocab) names.push_back(prefix + field + "=" + v);
}

inline void one_hot_values(std::vector<double>& row, const std::vector<std::string>& vocab,
                           const std::string& value) {
  for (const auto& v : vocab) row.push_back(v == value ? 1.0 : 0.0);
}

}  // namespace detail

// Feature names for a bundle; identical at every checkpoint.
inline std::vector<std::string> feature_names(const SourceBundle& b) {
  const std::string p = to_string(b.tag) + ".";
  std::vector<std::string> names;
  for (const auto& t : b.vocabulary.activity_types) names.push_back(p + "clicks." + t);
  names.push_back(p + "clicks_total");
  if (b.tag.is_primary()) {
    names.push_back(p + "clicks_last7");
    names.push_back(p + "clicks_last14");
    names.push_back(p + "active_days");
    names.push_back(p + "score_mean");
    names.push_back(p + "score_last");
    names.push_back(p + "n_submitted");
    names.push_back(p + "n_due");
    detail::one_hot(names, p, "gender", b.vocabulary.genders);
    detail::one_hot(names, p, "region", b.vocabulary.regions);
    detail::one_hot(names, p, "highest_education", b.vocabulary.highest_education);
    detail::one_hot(names, p, "age_band", b.vocabulary.age_bands);
    names.push_back(p + "disability");
    names.push_back(p + "num_prev_attempts");
  } else {
    names.push_back(p + "active_days");
    names.push_back(p + "score_mean");
    names.push_back(p + "n_submitted");
    names.push_back(p + "final_score");
    detail::one_hot(names, p, "final_result", b.vocabulary.final_results);
  }
  return names;
}

// Per-student features at `checkpoint_day`.
//
// Primary bundles only see events dated on or before the checkpoint, and
// only scores of assessments that were both submitted and due by then, so a
// not-yet-due target assessment never leaks into its own label. Additional
// bundles describe a course that ended before this one began and are
// aggregated whole. Students absent from the bundle get a row of missing
// markers and are flagged in `absent`.
inline FeatureMatrix featurize(const SourceBundle& bundle, int checkpoint_day, const std::vector<StudentId>& cohort) {
  if (cohort.empty()) throw InvariantError("featurize: empty cohort");
  const bool primary = bundle.tag.is_primary();
  if (primary && (checkpoint_day < 0 || checkpoint_day > bundle.course_length_days))
    throw InvariantError("featurize: checkpoint day " + std::to_string(checkpoint_day) + " outside course span");

  FeatureMatrix m;
  m.feature_names = feature_names(bundle);
  m.checkpoint_day = checkpoint_day;
  m.sources_included = {bundle.tag};
  m.student_ids = cohort;
  m.values.reserve(cohort.size() * m.cols());

  const detail::StudentSlices slices(bundle);
  std::map<std::string, std::size_t> type_index;
  for (std::size_t i = 0; i < bundle.vocabulary.activity_types.size(); ++i)
    type_index.emplace(bundle.vocabulary.activity_types[i], i);
  const int horizon = primary ? checkpoint_day : bundle.course_length_days;
  int n_due = 0;
  for (const auto& a : bundle.catalog)
    if (a.deadline_day <= horizon) ++n_due;

  std::vector<double> row;
  for (const auto& id : cohort) {
    row.clear();
    auto demo = slices.demographics.find(id);
    if (demo == slices.demographics.end()) {
      m.values.insert(m.values.end(), m.cols(), kMissing);
      m.absent.push_back(true);
      continue;
    }
    m.absent.push_back(false);

    std::vector<double> by_type(type_index.size(), 0.0);
    double total = 0, last7 = 0, last14 = 0;
    std::set<int> active;
    for (const auto* e : detail::StudentSlices::of(slices.events, id)) {
      if (primary && e->day > checkpoint_day) continue;
      by_type[type_index.at(e->activity_type)] += e->clicks;
      total += e->clicks;
      if (e->day > checkpoint_day - 7) last7 += e->clicks;
      if (e->day > checkpoint_day - 14) last14 += e->clicks;
      if (e->clicks > 0) active.insert(e->day);
    }

    double score_sum = 0;
    int scored = 0, submitted = 0;
    std::optional<double> last_score, final_score;
    std::tuple<int, int, std::string> last_key{};
    double weighted = 0, weight_sum = 0;
    for (const auto* r : detail::StudentSlices::of(slices.records, id)) {
      if (!r->submitted_day) continue;
      if (primary && (*r->submitted_day > checkpoint_day || r->deadline_day > checkpoint_day)) continue;
      ++submitted;
      if (!r->score) continue;
      score_sum += *r->score;
      ++scored;
      weighted += *r->score * r->weight;
      weight_sum += r->weight;
      std::tuple<int, int, std::string> key{r->deadline_day, *r->submitted_day, r->assessment_id};
      if (!last_score || key > last_key) {
        last_score = *r->score;
        last_key = key;
      }
      if (!primary) {
        for (const auto& a : bundle.catalog)
          if (a.assessment_id == r->assessment_id && a.is_final) final_score = *r->score;
      }
    }
    const double score_mean = scored ? score_sum / scored : kMissing;

    row.insert(row.end(), by_type.begin(), by_type.end());
    row.push_back(total);
    if (primary) {
      const auto& d = *demo->second;
      row.push_back(last7);
      row.push_back(last14);
      row.push_back(static_cast<double>(active.size()));
      row.push_back(score_mean);
      row.push_back(last_score ? *last_score : kMissing);
      row.push_back(submitted);
      row.push_back(n_due);
      detail::one_hot_values(row, bundle.vocabulary.genders, d.gender);
      detail::one_hot_values(row, bundle.vocabulary.regions, d.region);
      detail::one_hot_values(row, bundle.vocabulary.highest_education, d.highest_education);
      detail::one_hot_values(row, bundle.vocabulary.age_bands, d.age_band);
      row.push_back(d.disability ? 1.0 : 0.0);
      row.push_back(d.num_prev_attempts);
    } else {
      // Final score: the final exam when sat, else the weighted mean of all scores.
      if (!final_score && weight_sum > 0) final_score = weighted / weight_sum;
      if (!final_score && scored) final_score = score_mean;
      row.push_back(static_cast<double>(active.size()));
      row.push_back(score_mean);
      row.push_back(submitted);
      row.push_back(final_score ? *final_score : kMissing);
      detail::one_hot_values(row, bundle.vocabulary.final_results, demo->second->final_result);
    }
    m.values.insert(m.values.end(), row.begin(), row.end());
  }
  return m;
}

// Target is the first assessment due strictly after the checkpoint (ties by id).
inline const AssessmentInfo* next_assessment(const SourceBundle& primary, int checkpoint_day) {
  const AssessmentInfo* target = nullptr;
  for (const auto& a : primary.catalog) {
    if (a.deadline_day <= checkpoint_day) continue;
    if (!target || std::tie(a.deadline_day, a.assessment_id) < std::tie(target->deadline_day, target->assessment_id))
      target = &a;
  }
  return target;
}

// Success iff the student's score on the next assessment reaches the
// threshold; no submission or no score counts as failure.
inline LabelVector label_next_assessment(const SourceBundle& primary, int checkpoint_day,
                                         const std::vector<StudentId>& cohort, double pass_threshold) {
  const auto* target = next_assessment(primary, checkpoint_day);
  if (!target)
    throw DataError("no assessment due after day " + std::to_string(checkpoint_day) + " in " + primary.course_id +
                    "-" + primary.semester_id);
  std::unordered_map<StudentId, double> scores;
  for (const auto& r : primary.assessments)
    if (r.assessment_id == target->assessment_id && r.score) scores[r.student_id] = *r.score;
  LabelVector out;
  out.target_assessment_id = target->assessment_id;
  out.student_ids = cohort;
  for (const auto& id : cohort) {
    auto it = scores.find(id);
    out.labels.push_back(it != scores.end() && it->second >= pass_threshold ? Outcome::Success : Outcome::Failure);
  }
  return out;
}

inline void write_features_csv(std::ostream& out, const FeatureMatrix& m) {
  std::vector<std::string> header{"student_id"};
  header.insert(header.end(), m.feature_names.begin(), m.feature_names.end());
  csv::write_row(out, header);
  std::vector<std::string> fields;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    fields.assign(1, m.student_ids[r]);
    for (double v : m.row(r)) fields.push_back(csv::format_double(v));
    csv::write_row(out, fields);
  }
}

}  // namespace fep
