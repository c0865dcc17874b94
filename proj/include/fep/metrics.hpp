#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fep/common.hpp"
#include "fep/csv.hpp"
#include "fep/ledger.hpp"

namespace fep {

// Students x checkpoints grid of prediction correctness.
class CorrectnessGrid {
 public:
  CorrectnessGrid() = default;

  CorrectnessGrid(std::vector<StudentId> students, std::size_t checkpoints)
      : students_(std::move(students)), checkpoints_(checkpoints), cells_(students_.size() * checkpoints, 0) {}

  // Rows must all have the same length.
  static CorrectnessGrid from_rows(const std::vector<std::vector<bool>>& rows) {
    std::vector<StudentId> ids;
    for (std::size_t i = 0; i < rows.size(); ++i) ids.push_back(std::to_string(i));
    CorrectnessGrid g(std::move(ids), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != g.checkpoints_) throw InvariantError("correctness grid is not rectangular");
      for (std::size_t t = 0; t < rows[i].size(); ++t) g.set(i, t, rows[i][t]);
    }
    return g;
  }

  std::size_t students() const { return students_.size(); }
  std::size_t checkpoints() const { return checkpoints_; }
  const std::vector<StudentId>& student_ids() const { return students_; }

  bool at(std::size_t student, std::size_t t) const { return cells_[student * checkpoints_ + t] != 0; }
  void set(std::size_t student, std::size_t t, bool correct) { cells_[student * checkpoints_ + t] = correct; }

 private:
  std::vector<StudentId> students_;
  std::size_t checkpoints_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Fraction of correct predictions at checkpoint t.
inline double accuracy(const CorrectnessGrid& grid, std::size_t t) {
  if (grid.students() == 0) throw InvariantError("accuracy of an empty column");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < grid.students(); ++i) correct += grid.at(i, t);
  return static_cast<double>(correct) / static_cast<double>(grid.students());
}

inline double accuracy(const std::vector<bool>& column) {
  if (column.empty()) throw InvariantError("accuracy of an empty column");
  return static_cast<double>(std::count(column.begin(), column.end(), true)) / static_cast<double>(column.size());
}

namespace detail {

inline void check_prefix(const CorrectnessGrid& grid, std::size_t upto) {
  if (upto >= grid.checkpoints()) throw InvariantError("metric prefix index beyond the last checkpoint");
  if (grid.students() == 0) throw InvariantError("metric over an empty cohort");
}

}  // namespace detail

// Index of the first correct prediction within [0, upto], or upto + 1 when none.
inline std::size_t first_correct(const CorrectnessGrid& grid, std::size_t student, std::size_t upto) {
  for (std::size_t t = 0; t <= upto; ++t)
    if (grid.at(student, t)) return t;
  return upto + 1;
}

inline std::size_t longest_correct_run(const CorrectnessGrid& grid, std::size_t student, std::size_t upto) {
  std::size_t best = 0, run = 0;
  for (std::size_t t = 0; t <= upto; ++t) {
    run = grid.at(student, t) ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

// Mean over students of first-correct index / prefix length; a student never
// correct within the prefix scores 1.
inline double earliness(const CorrectnessGrid& grid, std::size_t upto) {
  detail::check_prefix(grid, upto);
  const double len = static_cast<double>(upto + 1);
  double sum = 0;
  for (std::size_t i = 0; i < grid.students(); ++i) {
    std::size_t first = first_correct(grid, i, upto);
    sum += first > upto ? 1.0 : static_cast<double>(first) / len;
  }
  return sum / static_cast<double>(grid.students());
}

// Mean over students of longest consecutive-correct run / prefix length.
inline double stability(const CorrectnessGrid& grid, std::size_t upto) {
  detail::check_prefix(grid, upto);
  const double len = static_cast<double>(upto + 1);
  double sum = 0;
  for (std::size_t i = 0; i < grid.students(); ++i) sum += static_cast<double>(longest_correct_run(grid, i, upto)) / len;
  return sum / static_cast<double>(grid.students());
}

struct EssBreakdown {
  struct Student {
    std::optional<std::size_t> first_correct;
    std::size_t longest_run = 0;

    bool operator==(const Student&) const = default;
  };

  double earliness = 1.0;
  double stability = 0.0;
  double ess = 0.0;
  std::vector<Student> per_student;
};

inline double harmonic_ess(double earliness_value, double stability_value) {
  const double timely = 1.0 - earliness_value;
  const double denom = timely + stability_value;
  return denom > 0 ? 2.0 * timely * stability_value / denom : 0.0;
}

inline EssBreakdown ess(const CorrectnessGrid& grid, std::size_t upto) {
  EssBreakdown b;
  b.earliness = earliness(grid, upto);
  b.stability = stability(grid, upto);
  b.ess = harmonic_ess(b.earliness, b.stability);
  for (std::size_t i = 0; i < grid.students(); ++i) {
    std::size_t first = first_correct(grid, i, upto);
    b.per_student.push_back({first > upto ? std::nullopt : std::optional<std::size_t>(first),
                             longest_correct_run(grid, i, upto)});
  }
  return b;
}

// Mean number of sources per student: base sources plus ledger entries.
inline double data_consumption(const AcquisitionLedger& ledger, const std::vector<StudentId>& cohort,
                               int n_base_sources = 1) {
  if (cohort.empty()) throw InvariantError("data consumption of an empty cohort");
  double total = 0;
  for (const auto& id : cohort) total += n_base_sources + static_cast<double>(ledger.count_for(id));
  return total / static_cast<double>(cohort.size());
}

// (MS - FEP) / MS as a whole percentage.
inline int consumption_reduction_percent(double multi_source, double frugal) {
  if (!(multi_source > 0)) throw InvariantError("reduction against a non-positive consumption");
  return static_cast<int>(std::lround((multi_source - frugal) / multi_source * 100.0));
}

// Consumption shown to two decimals, truncated (1.4654 reads 1.46).
inline std::string format_consumption(double value) {
  return csv::format_fixed(std::floor(value * 100.0 + 1e-9) / 100.0, 2);
}

}  // namespace fep
