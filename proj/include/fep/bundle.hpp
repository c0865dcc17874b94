#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fep/common.hpp"
#include "fep/csv.hpp"

namespace fep {

struct StudentDemographics {
  StudentId student_id;
  std::string gender;
  std::string region;
  std::string highest_education;
  std::string age_band;
  bool disability = false;
  int num_prev_attempts = 0;
  // Outcome of the course this record belongs to (Pass, Distinction, Fail, Withdrawn).
  std::string final_result;

  bool operator==(const StudentDemographics&) const = default;
};

struct InteractionEvent {
  StudentId student_id;
  std::string activity_type;
  int day = 0;
  int clicks = 0;

  bool operator==(const InteractionEvent&) const = default;
};

// One assessment of a course, independent of any student.
struct AssessmentInfo {
  std::string assessment_id;
  std::string type;
  int deadline_day = 0;
  double weight = 0.0;
  bool is_final = false;

  bool operator==(const AssessmentInfo&) const = default;
};

// One student's submission of an assessment.
struct AssessmentRecord {
  StudentId student_id;
  std::string assessment_id;
  int deadline_day = 0;
  std::optional<int> submitted_day;
  std::optional<double> score;
  double weight = 0.0;

  bool operator==(const AssessmentRecord&) const = default;
};

// Closed vocabularies for every categorical field; values outside them are errors.
struct Vocabulary {
  std::vector<std::string> genders;
  std::vector<std::string> regions;
  std::vector<std::string> highest_education;
  std::vector<std::string> age_bands;
  std::vector<std::string> final_results;
  std::vector<std::string> activity_types;

  bool operator==(const Vocabulary&) const = default;
};

inline bool is_success_result(std::string_view final_result) {
  return final_result == "Pass" || final_result == "Distinction";
}

struct SourceBundle {
  SourceTag tag;
  std::string course_id;
  std::string semester_id;
  int course_length_days = 1;
  Vocabulary vocabulary;
  std::vector<StudentDemographics> demographics;
  std::vector<InteractionEvent> events;
  std::vector<AssessmentInfo> catalog;
  std::vector<AssessmentRecord> assessments;
  // Additional sources draw each student from a different course; this
  // records which one ("module-presentation").
  std::map<StudentId, std::string> origin;

  bool operator==(const SourceBundle&) const = default;

  std::vector<StudentId> student_ids() const {
    std::vector<StudentId> ids;
    ids.reserve(demographics.size());
    for (const auto& d : demographics) ids.push_back(d.student_id);
    return ids;
  }

  const StudentDemographics* find_student(const StudentId& id) const {
    for (const auto& d : demographics)
      if (d.student_id == id) return &d;
    return nullptr;
  }

  void validate() const;
};

namespace detail {

inline void require_in(const std::vector<std::string>& vocab, const std::string& value,
                       const char* field, const std::string& context) {
  if (std::find(vocab.begin(), vocab.end(), value) == vocab.end())
    throw DataError(context + ": " + field + " value '" + value + "' is not in the declared vocabulary");
}

}  // namespace detail

inline void SourceBundle::validate() const {
  const std::string ctx = "bundle " + to_string(tag) + " " + course_id + "-" + semester_id;
  if (course_length_days <= 0) throw DataError(ctx + ": course_length_days must be positive");
  std::unordered_set<StudentId> ids;
  for (const auto& d : demographics) {
    if (!ids.insert(d.student_id).second) throw DataError(ctx + ": duplicate student_id " + d.student_id);
    detail::require_in(vocabulary.genders, d.gender, "gender", ctx);
    detail::require_in(vocabulary.regions, d.region, "region", ctx);
    detail::require_in(vocabulary.highest_education, d.highest_education, "highest_education", ctx);
    detail::require_in(vocabulary.age_bands, d.age_band, "age_band", ctx);
    detail::require_in(vocabulary.final_results, d.final_result, "final_result", ctx);
    if (d.num_prev_attempts < 0) throw DataError(ctx + ": negative num_prev_attempts for " + d.student_id);
  }
  for (const auto& e : events) {
    if (!ids.count(e.student_id)) throw DataError(ctx + ": event for unknown student " + e.student_id);
    detail::require_in(vocabulary.activity_types, e.activity_type, "activity_type", ctx);
    if (e.clicks < 0) throw DataError(ctx + ": negative clicks for " + e.student_id);
    if (e.day > course_length_days || e.day < -course_length_days)
      throw DataError(ctx + ": event day " + std::to_string(e.day) + " outside course span");
  }
  std::set<std::string> assessment_ids;
  for (const auto& a : catalog) {
    if (!assessment_ids.insert(a.assessment_id).second)
      throw DataError(ctx + ": duplicate assessment " + a.assessment_id);
    if (a.weight < 0 || a.weight > 100) throw DataError(ctx + ": assessment weight out of [0,100]");
  }
  for (const auto& r : assessments) {
    if (!ids.count(r.student_id)) throw DataError(ctx + ": assessment record for unknown student " + r.student_id);
    if (!assessment_ids.count(r.assessment_id))
      throw DataError(ctx + ": record for unknown assessment " + r.assessment_id);
    if (r.score && (*r.score < 0 || *r.score > 100))
      throw DataError(ctx + ": score out of [0,100] for " + r.student_id);
  }
}

// Copy of `bundle` holding only the listed students (in bundle order).
inline SourceBundle restrict_to(const SourceBundle& bundle, const std::vector<StudentId>& cohort) {
  std::unordered_set<StudentId> keep(cohort.begin(), cohort.end());
  SourceBundle out;
  out.tag = bundle.tag;
  out.course_id = bundle.course_id;
  out.semester_id = bundle.semester_id;
  out.course_length_days = bundle.course_length_days;
  out.vocabulary = bundle.vocabulary;
  out.catalog = bundle.catalog;
  for (const auto& d : bundle.demographics)
    if (keep.count(d.student_id)) out.demographics.push_back(d);
  for (const auto& e : bundle.events)
    if (keep.count(e.student_id)) out.events.push_back(e);
  for (const auto& r : bundle.assessments)
    if (keep.count(r.student_id)) out.assessments.push_back(r);
  for (const auto& [id, o] : bundle.origin)
    if (keep.count(id)) out.origin.emplace(id, o);
  return out;
}

// ---------------------------------------------------------------------------
// Bundle cache format, version 1. Tab-separated, one record per line:
//
//   fep-bundle <version>
//   tag|course|semester|length <value>
//   vocab <field> <value>...
//   demographics <n>      then n rows: id gender region education age disability prev final_result
//   catalog <n>           then n rows: id type deadline weight is_final
//   assessments <n>       then n rows: student assessment deadline submitted score weight
//   events <n>            then n rows: student activity day clicks
//   origin <n>            then n rows: student origin
//   end
//
// Absent optional values are written as NA. Reals use the shortest
// round-trip representation.

inline constexpr int kBundleFormatVersion = 1;

namespace detail {

inline const std::string& checked_token(const std::string& s) {
  if (s.find_first_of("\t\r\n") != std::string::npos)
    throw DataError("bundle value contains a tab or newline: '" + s + "'");
  return s;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

inline void write_bundle(std::ostream& out, const SourceBundle& b) {
  using detail::checked_token;
  out << "fep-bundle\t" << kBundleFormatVersion << '\n';
  out << "tag\t" << to_string(b.tag) << '\n';
  out << "course\t" << checked_token(b.course_id) << '\n';
  out << "semester\t" << checked_token(b.semester_id) << '\n';
  out << "length\t" << b.course_length_days << '\n';
  auto vocab = [&](const char* name, const std::vector<std::string>& values) {
    out << "vocab\t" << name;
    for (const auto& v : values) out << '\t' << checked_token(v);
    out << '\n';
  };
  vocab("gender", b.vocabulary.genders);
  vocab("region", b.vocabulary.regions);
  vocab("highest_education", b.vocabulary.highest_education);
  vocab("age_band", b.vocabulary.age_bands);
  vocab("final_result", b.vocabulary.final_results);
  vocab("activity_type", b.vocabulary.activity_types);

  auto opt_int = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("NA"); };
  auto opt_real = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string("NA"); };

  out << "demographics\t" << b.demographics.size() << '\n';
  for (const auto& d : b.demographics)
    out << checked_token(d.student_id) << '\t' << checked_token(d.gender) << '\t' << checked_token(d.region) << '\t'
        << checked_token(d.highest_education) << '\t' << checked_token(d.age_band) << '\t' << (d.disability ? 1 : 0)
        << '\t' << d.num_prev_attempts << '\t' << checked_token(d.final_result) << '\n';
  out << "catalog\t" << b.catalog.size() << '\n';
  for (const auto& a : b.catalog)
    out << checked_token(a.assessment_id) << '\t' << checked_token(a.type) << '\t' << a.deadline_day << '\t'
        << csv::format_double(a.weight) << '\t' << (a.is_final ? 1 : 0) << '\n';
  out << "assessments\t" << b.assessments.size() << '\n';
  for (const auto& r : b.assessments)
    out << checked_token(r.student_id) << '\t' << checked_token(r.assessment_id) << '\t' << r.deadline_day << '\t'
        << opt_int(r.submitted_day) << '\t' << opt_real(r.score) << '\t' << csv::format_double(r.weight) << '\n';
  out << "events\t" << b.events.size() << '\n';
  for (const auto& e : b.events)
    out << checked_token(e.student_id) << '\t' << checked_token(e.activity_type) << '\t' << e.day << '\t' << e.clicks
        << '\n';
  out << "origin\t" << b.origin.size() << '\n';
  for (const auto& [id, o] : b.origin) out << checked_token(id) << '\t' << checked_token(o) << '\n';
  out << "end\n";
}

inline SourceBundle read_bundle(std::istream& in, const std::string& origin_name = "<bundle>") {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(origin_name + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&]() -> std::vector<std::string> {
    if (!std::getline(in, line)) throw fail("unexpected end of file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return detail::split_tabs(line);
  };
  auto expect = [&](const std::vector<std::string>& f, const char* key, std::size_t n) {
    if (f.empty() || f[0] != key) throw fail(std::string("expected '") + key + "'");
    if (f.size() != n) throw fail(std::string("wrong field count for '") + key + "'");
  };
  auto to_int = [&](const std::string& s) {
    auto v = csv::parse_number<int>(s);
    if (!v) throw fail("bad integer '" + s + "'");
    return *v;
  };
  auto to_real = [&](const std::string& s) {
    auto v = csv::parse_number<double>(s);
    if (!v) throw fail("bad real '" + s + "'");
    return *v;
  };
  auto to_count = [&](const std::string& s) {
    auto v = csv::parse_number<std::size_t>(s);
    if (!v) throw fail("bad count '" + s + "'");
    return *v;
  };
  auto to_flag = [&](const std::string& s) {
    if (s != "0" && s != "1") throw fail("bad flag '" + s + "'");
    return s == "1";
  };

  SourceBundle b;
  auto f = next();
  expect(f, "fep-bundle", 2);
  if (to_int(f[1]) != kBundleFormatVersion) throw fail("unsupported bundle version " + f[1]);
  f = next();
  expect(f, "tag", 2);
  try {
    b.tag = parse_source_tag(f[1]);
  } catch (const DataError& e) {
    throw fail(e.what());
  }
  f = next();
  expect(f, "course", 2);
  b.course_id = f[1];
  f = next();
  expect(f, "semester", 2);
  b.semester_id = f[1];
  f = next();
  expect(f, "length", 2);
  b.course_length_days = to_int(f[1]);
  for (auto* target : {&b.vocabulary.genders, &b.vocabulary.regions, &b.vocabulary.highest_education,
                       &b.vocabulary.age_bands, &b.vocabulary.final_results, &b.vocabulary.activity_types}) {
    f = next();
    if (f.size() < 2 || f[0] != "vocab") throw fail("expected 'vocab'");
    target->assign(f.begin() + 2, f.end());
  }

  f = next();
  expect(f, "demographics", 2);
  for (std::size_t i = 0, n = to_count(f[1]); i < n; ++i) {
    auto r = next();
    if (r.size() != 8) throw fail("demographics row needs 8 fields");
    b.demographics.push_back({r[0], r[1], r[2], r[3], r[4], to_flag(r[5]), to_int(r[6]), r[7]});
  }
  f = next();
  expect(f, "catalog", 2);
  for (std::size_t i = 0, n = to_count(f[1]); i < n; ++i) {
    auto r = next();
    if (r.size() != 5) throw fail("catalog row needs 5 fields");
    b.catalog.push_back({r[0], r[1], to_int(r[2]), to_real(r[3]), to_flag(r[4])});
  }
  f = next();
  expect(f, "assessments", 2);
  for (std::size_t i = 0, n = to_count(f[1]); i < n; ++i) {
    auto r = next();
    if (r.size() != 6) throw fail("assessment row needs 6 fields");
    AssessmentRecord rec{r[0], r[1], to_int(r[2]), std::nullopt, std::nullopt, to_real(r[5])};
    if (r[3] != "NA") rec.submitted_day = to_int(r[3]);
    if (r[4] != "NA") rec.score = to_real(r[4]);
    b.assessments.push_back(std::move(rec));
  }
  f = next();
  expect(f, "events", 2);
  for (std::size_t i = 0, n = to_count(f[1]); i < n; ++i) {
    auto r = next();
    if (r.size() != 4) throw fail("event row needs 4 fields");
    b.events.push_back({r[0], r[1], to_int(r[2]), to_int(r[3])});
  }
  f = next();
  expect(f, "origin", 2);
  for (std::size_t i = 0, n = to_count(f[1]); i < n; ++i) {
    auto r = next();
    if (r.size() != 2) throw fail("origin row needs 2 fields");
    b.origin.emplace(r[0], r[1]);
  }
  f = next();
  expect(f, "end", 1);
  b.validate();
  return b;
}

inline void save_bundle(const std::filesystem::path& path, const SourceBundle& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_bundle(out, b);
}

inline SourceBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_bundle(in, path.string());
}

inline constexpr std::string_view kBundleSchemaDoc = R"(fep-bundle format, version 1

Plain text, one record per line, fields separated by a single TAB.
Optional values that are absent are written as NA. Real numbers use the
shortest representation that reads back to the same binary value.

  fep-bundle  <version>
  tag         primary | additional<k>
  course      <course id>
  semester    <semester id>
  length      <course length in days>
  vocab       gender            <value>...
  vocab       region            <value>...
  vocab       highest_education <value>...
  vocab       age_band          <value>...
  vocab       final_result      <value>...
  vocab       activity_type     <value>...
  demographics <n>
    <student> <gender> <region> <highest_education> <age_band> <disability 0|1> <num_prev_attempts> <final_result>
  catalog <n>
    <assessment> <type> <deadline_day> <weight> <is_final 0|1>
  assessments <n>
    <student> <assessment> <deadline_day> <submitted_day|NA> <score|NA> <weight>
  events <n>
    <student> <activity_type> <day> <clicks>
  origin <n>
    <student> <origin course-presentation>
  end
)";

}  // namespace fep
