#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fep/bundle.hpp"
#include "fep/common.hpp"
#include "fep/csv.hpp"

namespace fep::oulad {

// Published closed vocabularies of the OULAD tables.
inline const std::vector<std::string> kGenders = {"F", "M"};
inline const std::vector<std::string> kRegions = {
    "East Anglian Region", "East Midlands Region", "Ireland",           "London Region", "North Region",
    "North Western Region", "Scotland",            "South East Region", "South Region",  "South West Region",
    "Wales",                "West Midlands Region", "Yorkshire Region"};
inline const std::vector<std::string> kHighestEducation = {
    "A Level or Equivalent", "HE Qualification", "Lower Than A Level", "No Formal quals",
    "Post Graduate Qualification"};
inline const std::vector<std::string> kAgeBands = {"0-35", "35-55", "55<="};
inline const std::vector<std::string> kFinalResults = {"Distinction", "Fail", "Pass", "Withdrawn"};
inline const std::vector<std::string> kAssessmentTypes = {"CMA", "Exam", "TMA"};
inline const std::vector<std::string> kActivityTypes = {
    "dataplus",  "dualpane", "externalquiz", "folder",         "forumng",         "glossary",     "homepage",
    "htmlactivity", "oucollaborate", "oucontent", "ouelluminate", "ouwiki",      "page",         "questionnaire",
    "quiz",      "repeatactivity", "resource", "sharedsubpage", "subpage",        "url"};

// Cohort of the published CCC-2014J experiment and its checkpoint days,
// printed next to the achieved values for comparison.
inline constexpr int kPublishedCohortSize = 694;
inline constexpr int kPublishedSucceeded = 378;
inline constexpr int kPublishedFailed = 316;
inline const std::vector<int> kPublishedCheckpointDays = {7, 12, 18, 32, 67, 109, 144, 158, 207, 214};

using Symbol = std::uint32_t;

// Interns identifiers and categorical strings so that the ten-million-row
// clickstream table stays compact.
class SymbolTable {
 public:
  Symbol intern(const std::string& s) {
    auto it = index_.find(s);
    if (it != index_.end()) return it->second;
    auto id = static_cast<Symbol>(names_.size());
    names_.push_back(s);
    index_.emplace(s, id);
    return id;
  }

  std::optional<Symbol> lookup(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(Symbol s) const { return names_.at(s); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Symbol> index_;
};

struct CourseRow {
  Symbol module, presentation;
  int length_days;
};

struct AssessmentRow {
  Symbol module, presentation, assessment, type;
  std::optional<int> date;
  double weight;
};

struct StudentInfoRow {
  Symbol module, presentation, student;
  Symbol gender, region, highest_education, imd_band, age_band;
  int num_prev_attempts;
  int studied_credits;
  bool disability;
  Symbol final_result;
};

struct RegistrationRow {
  Symbol module, presentation, student;
  std::optional<int> registered;
  std::optional<int> unregistered;
};

struct StudentAssessmentRow {
  Symbol assessment, student;
  std::optional<int> submitted;
  bool banked;
  std::optional<double> score;
};

struct StudentVleRow {
  Symbol module, presentation, student, site;
  int date;
  int clicks;
};

struct VleRow {
  Symbol site, module, presentation, activity_type;
};

struct RowDiagnostic {
  std::string file;
  std::size_t line;
  std::string column;
  std::string message;
};

struct LoadOptions {
  // Rejected rows tolerated per file, as a fraction of its data rows.
  double bad_row_fraction = 0.001;
};

struct Tables {
  SymbolTable symbols;
  std::vector<CourseRow> courses;
  std::vector<AssessmentRow> assessments;
  std::vector<StudentInfoRow> student_info;
  std::vector<RegistrationRow> registrations;
  std::vector<StudentAssessmentRow> student_assessments;
  std::vector<StudentVleRow> student_vle;
  std::vector<VleRow> vle;
  std::vector<RowDiagnostic> rejected;
  std::vector<std::pair<std::string, std::size_t>> row_counts;

  const std::string& str(Symbol s) const { return symbols.name(s); }
};

namespace detail {

struct CellError {
  std::string column;
  std::string message;
};

class RowView {
 public:
  RowView(const std::vector<std::string>& header, const std::vector<std::string>& fields, SymbolTable& symbols)
      : header_(header), fields_(fields), symbols_(symbols) {}

  const std::string& raw(std::size_t i) const { return fields_[i]; }

  Symbol symbol(std::size_t i) const {
    if (fields_[i].empty()) throw CellError{header_[i], "empty identifier"};
    return symbols_.intern(fields_[i]);
  }

  Symbol categorical(std::size_t i, const std::vector<std::string>& vocab) const {
    if (std::find(vocab.begin(), vocab.end(), fields_[i]) == vocab.end())
      throw CellError{header_[i], "value '" + fields_[i] + "' outside the closed vocabulary"};
    return symbols_.intern(fields_[i]);
  }

  Symbol any_text(std::size_t i) const { return symbols_.intern(fields_[i]); }

  static bool is_null(const std::string& s) { return s.empty() || s == "?"; }

  template <class T>
  T number(std::size_t i) const {
    auto v = csv::parse_number<T>(fields_[i]);
    if (!v) throw CellError{header_[i], "cannot parse '" + fields_[i] + "'"};
    return *v;
  }

  template <class T>
  std::optional<T> optional_number(std::size_t i) const {
    if (is_null(fields_[i])) return std::nullopt;
    return number<T>(i);
  }

  bool flag01(std::size_t i) const {
    int v = number<int>(i);
    if (v != 0 && v != 1) throw CellError{header_[i], "expected 0 or 1, got '" + fields_[i] + "'"};
    return v == 1;
  }

  bool flag_yn(std::size_t i) const {
    if (fields_[i] == "Y") return true;
    if (fields_[i] == "N") return false;
    throw CellError{header_[i], "expected Y or N, got '" + fields_[i] + "'"};
  }

 private:
  const std::vector<std::string>& header_;
  const std::vector<std::string>& fields_;
  SymbolTable& symbols_;
};

inline void load_file(const std::filesystem::path& dir, const std::string& name,
                      const std::vector<std::string>& expected, const LoadOptions& options, Tables& tables,
                      const std::function<void(const RowView&)>& on_row) {
  auto path = dir / name;
  if (!std::filesystem::exists(path)) throw DataError("missing OULAD file: " + name);
  auto reader = csv::Reader::from_file(path.string());
  std::vector<std::string> fields;
  std::size_t line = 0;
  if (!reader.next(fields, line) || fields != expected)
    throw DataError(name + ": header mismatch; expected [" + join(expected, ",") + "], found [" + join(fields, ",") +
                    "]");
  std::size_t rows = 0;
  std::vector<RowDiagnostic> bad;
  while (reader.next(fields, line)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    ++rows;
    if (fields.size() != expected.size()) {
      bad.push_back({name, line, "",
                     "expected " + std::to_string(expected.size()) + " fields, found " +
                         std::to_string(fields.size())});
      continue;
    }
    try {
      on_row(RowView(expected, fields, tables.symbols));
    } catch (const CellError& e) {
      bad.push_back({name, line, e.column, e.message});
    }
  }
  auto budget = static_cast<std::size_t>(std::floor(options.bad_row_fraction * static_cast<double>(rows)));
  if (bad.size() > budget) {
    const auto& first = bad.front();
    throw DataError(name + ": " + std::to_string(bad.size()) + " malformed rows exceed the budget of " +
                    std::to_string(budget) + "; first at row " + std::to_string(first.line) +
                    (first.column.empty() ? "" : ", column " + first.column) + ": " + first.message);
  }
  tables.rejected.insert(tables.rejected.end(), bad.begin(), bad.end());
  tables.row_counts.emplace_back(name, rows);
}

}  // namespace detail

// Reads the seven OULAD CSV files. Individually malformed rows are rejected
// and reported in `rejected`; exceeding the budget aborts the load.
inline Tables load_oulad(const std::filesystem::path& dir, const LoadOptions& options = {}) {
  for (const char* name : {"courses.csv", "assessments.csv", "studentInfo.csv", "studentRegistration.csv",
                           "studentAssessment.csv", "studentVle.csv", "vle.csv"})
    if (!std::filesystem::exists(dir / name)) throw DataError(std::string("missing OULAD file: ") + name);

  Tables t;
  using detail::RowView;
  detail::load_file(dir, "courses.csv", {"code_module", "code_presentation", "module_presentation_length"}, options,
                    t, [&](const RowView& r) {
                      CourseRow row{r.symbol(0), r.symbol(1), r.number<int>(2)};
                      if (row.length_days <= 0) throw detail::CellError{"module_presentation_length", "not positive"};
                      t.courses.push_back(row);
                    });
  detail::load_file(dir, "assessments.csv",
                    {"code_module", "code_presentation", "id_assessment", "assessment_type", "date", "weight"},
                    options, t, [&](const RowView& r) {
                      AssessmentRow row{r.symbol(0), r.symbol(1), r.symbol(2), r.categorical(3, kAssessmentTypes),
                                        r.optional_number<int>(4), r.number<double>(5)};
                      if (row.weight < 0 || row.weight > 100) throw detail::CellError{"weight", "outside [0,100]"};
                      t.assessments.push_back(row);
                    });
  detail::load_file(dir, "studentInfo.csv",
                    {"code_module", "code_presentation", "id_student", "gender", "region", "highest_education",
                     "imd_band", "age_band", "num_of_prev_attempts", "studied_credits", "disability", "final_result"},
                    options, t, [&](const RowView& r) {
                      StudentInfoRow row{r.symbol(0),
                                         r.symbol(1),
                                         r.symbol(2),
                                         r.categorical(3, kGenders),
                                         r.categorical(4, kRegions),
                                         r.categorical(5, kHighestEducation),
                                         r.any_text(6),
                                         r.categorical(7, kAgeBands),
                                         r.number<int>(8),
                                         r.number<int>(9),
                                         r.flag_yn(10),
                                         r.categorical(11, kFinalResults)};
                      if (row.num_prev_attempts < 0) throw detail::CellError{"num_of_prev_attempts", "negative"};
                      t.student_info.push_back(row);
                    });
  detail::load_file(dir, "studentRegistration.csv",
                    {"code_module", "code_presentation", "id_student", "date_registration", "date_unregistration"},
                    options, t, [&](const RowView& r) {
                      t.registrations.push_back({r.symbol(0), r.symbol(1), r.symbol(2), r.optional_number<int>(3),
                                                 r.optional_number<int>(4)});
                    });
  detail::load_file(dir, "studentAssessment.csv",
                    {"id_assessment", "id_student", "date_submitted", "is_banked", "score"}, options, t,
                    [&](const RowView& r) {
                      StudentAssessmentRow row{r.symbol(0), r.symbol(1), r.optional_number<int>(2), r.flag01(3),
                                               r.optional_number<double>(4)};
                      if (row.score && (*row.score < 0 || *row.score > 100))
                        throw detail::CellError{"score", "outside [0,100]"};
                      t.student_assessments.push_back(row);
                    });
  detail::load_file(dir, "studentVle.csv",
                    {"code_module", "code_presentation", "id_student", "id_site", "date", "sum_click"}, options, t,
                    [&](const RowView& r) {
                      StudentVleRow row{r.symbol(0), r.symbol(1), r.symbol(2), r.symbol(3), r.number<int>(4),
                                        r.number<int>(5)};
                      if (row.clicks < 0) throw detail::CellError{"sum_click", "negative"};
                      t.student_vle.push_back(row);
                    });
  detail::load_file(dir, "vle.csv",
                    {"id_site", "code_module", "code_presentation", "activity_type", "week_from", "week_to"}, options,
                    t, [&](const RowView& r) {
                      t.vle.push_back({r.symbol(0), r.symbol(1), r.symbol(2), r.categorical(3, kActivityTypes)});
                    });
  return t;
}

// Day number (proleptic Gregorian, days since 1970-01-01).
inline long days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

// OULAD presentations are "YYYYB" (February start) or "YYYYJ" (October start).
inline long presentation_start_day(const std::string& presentation) {
  if (presentation.size() != 5) throw DataError("unrecognised presentation code '" + presentation + "'");
  auto year = csv::parse_number<int>(presentation.substr(0, 4));
  if (!year) throw DataError("unrecognised presentation code '" + presentation + "'");
  switch (presentation[4]) {
    case 'B':
      return days_from_civil(*year, 2, 1);
    case 'J':
      return days_from_civil(*year, 10, 1);
    default:
      throw DataError("unrecognised presentation code '" + presentation + "'");
  }
}

namespace detail {

inline std::uint64_t course_key(Symbol module, Symbol presentation) {
  return (static_cast<std::uint64_t>(module) << 32) | presentation;
}

inline Vocabulary oulad_vocabulary(std::vector<std::string> activity_types) {
  std::sort(activity_types.begin(), activity_types.end());
  activity_types.erase(std::unique(activity_types.begin(), activity_types.end()), activity_types.end());
  return {kGenders, kRegions, kHighestEducation, kAgeBands, kFinalResults, std::move(activity_types)};
}

inline StudentDemographics demographics_of(const Tables& t, const StudentInfoRow& row) {
  return {t.str(row.student),           t.str(row.gender),
          t.str(row.region),            t.str(row.highest_education),
          t.str(row.age_band),          row.disability,
          row.num_prev_attempts,        t.str(row.final_result)};
}

// Assessment catalog of one course. A final exam without a date is due on
// the last day of the course.
inline std::vector<AssessmentInfo> catalog_of(const Tables& t, Symbol module, Symbol presentation, int length) {
  std::vector<AssessmentInfo> out;
  for (const auto& a : t.assessments) {
    if (a.module != module || a.presentation != presentation) continue;
    bool is_final = t.str(a.type) == "Exam";
    if (!a.date && !is_final)
      throw DataError("assessment " + t.str(a.assessment) + " of " + t.str(module) + "-" + t.str(presentation) +
                      " has no deadline");
    out.push_back({t.str(a.assessment), t.str(a.type), a.date ? *a.date : length, a.weight, is_final});
  }
  std::sort(out.begin(), out.end(), [](const AssessmentInfo& x, const AssessmentInfo& y) {
    return std::tie(x.deadline_day, x.assessment_id) < std::tie(y.deadline_day, y.assessment_id);
  });
  return out;
}

inline const CourseRow* find_course(const Tables& t, Symbol module, Symbol presentation) {
  for (const auto& c : t.courses)
    if (c.module == module && c.presentation == presentation) return &c;
  return nullptr;
}

}  // namespace detail

// Primary source: every student registered on (course_id, semester_id).
inline SourceBundle build_primary_source(const Tables& t, const std::string& course_id,
                                         const std::string& semester_id) {
  auto module = t.symbols.lookup(course_id);
  auto presentation = t.symbols.lookup(semester_id);
  const CourseRow* course = (module && presentation) ? detail::find_course(t, *module, *presentation) : nullptr;
  if (!course) {
    std::vector<std::string> pairs;
    for (const auto& c : t.courses) pairs.push_back(t.str(c.module) + "-" + t.str(c.presentation));
    std::sort(pairs.begin(), pairs.end());
    throw DataError("unknown course/semester " + course_id + "-" + semester_id + "; available: " + join(pairs, ", "));
  }

  SourceBundle b;
  b.tag = SourceTag::primary();
  b.course_id = course_id;
  b.semester_id = semester_id;
  b.course_length_days = course->length_days;

  std::unordered_map<Symbol, Symbol> site_type;
  std::vector<std::string> activity_types;
  for (const auto& v : t.vle) {
    if (v.module != *module || v.presentation != *presentation) continue;
    site_type[v.site] = v.activity_type;
    activity_types.push_back(t.str(v.activity_type));
  }
  b.vocabulary = detail::oulad_vocabulary(std::move(activity_types));

  std::unordered_set<Symbol> students;
  for (const auto& s : t.student_info) {
    if (s.module != *module || s.presentation != *presentation) continue;
    if (!students.insert(s.student).second)
      throw DataError("studentInfo.csv: student " + t.str(s.student) + " listed twice for " + course_id + "-" +
                      semester_id);
    b.demographics.push_back(detail::demographics_of(t, s));
  }

  for (const auto& e : t.student_vle) {
    if (e.module != *module || e.presentation != *presentation) continue;
    auto it = site_type.find(e.site);
    if (it == site_type.end()) throw DataError("studentVle.csv: site " + t.str(e.site) + " not listed in vle.csv");
    if (!students.count(e.student))
      throw DataError("studentVle.csv: student " + t.str(e.student) + " not registered on " + course_id + "-" +
                      semester_id);
    b.events.push_back({t.str(e.student), t.str(it->second), e.date, e.clicks});
  }

  b.catalog = detail::catalog_of(t, *module, *presentation, course->length_days);
  std::unordered_map<std::string, const AssessmentInfo*> by_id;
  for (const auto& a : b.catalog) by_id.emplace(a.assessment_id, &a);
  for (const auto& r : t.student_assessments) {
    auto it = by_id.find(t.str(r.assessment));
    if (it == by_id.end() || !students.count(r.student)) continue;
    b.assessments.push_back(
        {t.str(r.student), it->first, it->second->deadline_day, r.submitted, r.score, it->second->weight});
  }
  b.validate();
  return b;
}

// Additional source: each primary student's most recently completed prior
// course. A prior course qualifies when it ended strictly before the primary
// course started and the student did not withdraw before its first deadline.
// The latest end wins; ties go to the lexicographically smallest course id.
// Students without a qualifying course are absent from the result.
inline SourceBundle build_additional_source(const Tables& t, const SourceBundle& primary) {
  const long primary_start = presentation_start_day(primary.semester_id);
  auto primary_module = t.symbols.lookup(primary.course_id);
  auto primary_presentation = t.symbols.lookup(primary.semester_id);

  std::unordered_map<std::uint64_t, const CourseRow*> courses;
  for (const auto& c : t.courses) courses.emplace(detail::course_key(c.module, c.presentation), &c);

  std::unordered_map<std::uint64_t, int> first_deadline;
  for (const auto& a : t.assessments) {
    if (!a.date) continue;
    auto key = detail::course_key(a.module, a.presentation);
    auto [it, inserted] = first_deadline.emplace(key, *a.date);
    if (!inserted) it->second = std::min(it->second, *a.date);
  }

  std::map<std::tuple<std::uint64_t, Symbol>, std::optional<int>> unregistered;
  for (const auto& r : t.registrations)
    unregistered[{detail::course_key(r.module, r.presentation), r.student}] = r.unregistered;

  std::unordered_set<Symbol> cohort;
  for (const auto& d : primary.demographics)
    if (auto s = t.symbols.lookup(d.student_id)) cohort.insert(*s);

  struct Choice {
    long end;
    const StudentInfoRow* row;
  };
  std::unordered_map<Symbol, Choice> chosen;
  for (const auto& s : t.student_info) {
    if (!cohort.count(s.student)) continue;
    if (primary_module && primary_presentation && s.module == *primary_module &&
        s.presentation == *primary_presentation)
      continue;
    auto key = detail::course_key(s.module, s.presentation);
    auto course = courses.find(key);
    if (course == courses.end()) continue;
    long end = presentation_start_day(t.str(s.presentation)) + course->second->length_days;
    if (end >= primary_start) continue;
    auto reg = unregistered.find({key, s.student});
    auto deadline = first_deadline.find(key);
    if (reg != unregistered.end() && reg->second && deadline != first_deadline.end() &&
        *reg->second < deadline->second)
      continue;
    auto [it, inserted] = chosen.emplace(s.student, Choice{end, &s});
    if (inserted) continue;
    const auto& cur = *it->second.row;
    auto better = std::make_tuple(-end, t.str(s.module), t.str(s.presentation)) <
                  std::make_tuple(-it->second.end, t.str(cur.module), t.str(cur.presentation));
    if (better) it->second = Choice{end, &s};
  }

  SourceBundle b;
  b.tag = SourceTag::additional(0);
  b.course_id = "prior";
  b.semester_id = "prior";
  b.course_length_days = 1;

  std::set<std::tuple<Symbol, Symbol, Symbol>> wanted;  // (module, presentation, student)
  std::set<std::pair<Symbol, Symbol>> prior_courses;
  for (const auto& d : primary.demographics) {
    auto sym = t.symbols.lookup(d.student_id);
    if (!sym) continue;
    auto it = chosen.find(*sym);
    if (it == chosen.end()) continue;
    const auto& row = *it->second.row;
    b.demographics.push_back(detail::demographics_of(t, row));
    b.origin.emplace(d.student_id, t.str(row.module) + "-" + t.str(row.presentation));
    wanted.insert({row.module, row.presentation, row.student});
    prior_courses.insert({row.module, row.presentation});
    b.course_length_days =
        std::max(b.course_length_days, courses.at(detail::course_key(row.module, row.presentation))->length_days);
  }

  std::map<std::pair<Symbol, Symbol>, std::unordered_map<Symbol, Symbol>> site_type;
  std::vector<std::string> activity_types;
  for (const auto& v : t.vle) {
    if (!prior_courses.count({v.module, v.presentation})) continue;
    site_type[{v.module, v.presentation}][v.site] = v.activity_type;
    activity_types.push_back(t.str(v.activity_type));
  }
  b.vocabulary = detail::oulad_vocabulary(std::move(activity_types));

  for (const auto& e : t.student_vle) {
    if (!wanted.count({e.module, e.presentation, e.student})) continue;
    const auto& sites = site_type[{e.module, e.presentation}];
    auto it = sites.find(e.site);
    if (it == sites.end()) throw DataError("studentVle.csv: site " + t.str(e.site) + " not listed in vle.csv");
    b.events.push_back({t.str(e.student), t.str(it->second), e.date, e.clicks});
  }

  std::unordered_map<std::string, std::pair<AssessmentInfo, std::pair<Symbol, Symbol>>> assessment_course;
  for (const auto& [module, presentation] : prior_courses) {
    int length = courses.at(detail::course_key(module, presentation))->length_days;
    for (auto& a : detail::catalog_of(t, module, presentation, length)) {
      b.catalog.push_back(a);
      assessment_course.emplace(a.assessment_id, std::make_pair(a, std::make_pair(module, presentation)));
    }
  }
  for (const auto& r : t.student_assessments) {
    auto it = assessment_course.find(t.str(r.assessment));
    if (it == assessment_course.end()) continue;
    const auto& [info, course] = it->second;
    if (!wanted.count({course.first, course.second, r.student})) continue;
    b.assessments.push_back({t.str(r.student), info.assessment_id, info.deadline_day, r.submitted, r.score, info.weight});
  }
  b.validate();
  return b;
}

struct CohortCounts {
  std::size_t students = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
};

// Pass and Distinction count as succeeded; Fail and Withdrawn as failed.
inline CohortCounts count_cohort(const SourceBundle& primary, const std::vector<StudentId>& cohort) {
  std::unordered_map<StudentId, const StudentDemographics*> by_id;
  for (const auto& d : primary.demographics) by_id.emplace(d.student_id, &d);
  CohortCounts c;
  for (const auto& id : cohort) {
    auto it = by_id.find(id);
    if (it == by_id.end()) continue;
    ++c.students;
    if (is_success_result(it->second->final_result))
      ++c.succeeded;
    else
      ++c.failed;
  }
  return c;
}

}  // namespace fep::oulad
