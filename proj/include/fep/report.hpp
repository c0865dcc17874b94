#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fep/csv.hpp"
#include "fep/ledger.hpp"
#include "fep/metrics.hpp"
#include "fep/pipeline.hpp"

namespace fep {

struct CheckpointMetrics {
  int day = 0;
  double accuracy = 0;
  double earliness = 0;
  double stability = 0;
  double ess = 0;
};

// Per-checkpoint accuracy and prefix ESS for one model, plus its consumption.
struct MetricsReport {
  std::string model;
  std::vector<CheckpointMetrics> checkpoints;
  double consumption = 1.0;
};

inline MetricsReport evaluate(const std::string& model, const PredictionMatrix& matrix,
                              const AcquisitionLedger& ledger) {
  MetricsReport r;
  r.model = model;
  const auto grid = matrix.correctness();
  for (std::size_t t = 0; t < matrix.checkpoints.size(); ++t) {
    auto e = ess(grid, t);
    r.checkpoints.push_back({matrix.checkpoints.days[t], accuracy(grid, t), e.earliness, e.stability, e.ess});
  }
  r.consumption = data_consumption(ledger, matrix.student_ids);
  return r;
}

inline const std::vector<std::string>& metrics_csv_header() {
  static const std::vector<std::string> header{"model",     "checkpoint_day", "accuracy",   "earliness",
                                               "stability", "ess",            "consumption"};
  return header;
}

// One row per (model, checkpoint), then one consumption row per model.
inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
  csv::write_row(out, metrics_csv_header());
  for (const auto& r : reports)
    for (const auto& c : r.checkpoints)
      csv::write_row(out, {r.model, std::to_string(c.day), csv::format_double(c.accuracy),
                           csv::format_double(c.earliness), csv::format_double(c.stability),
                           csv::format_double(c.ess), ""});
  for (const auto& r : reports) csv::write_row(out, {r.model, "all", "", "", "", "", csv::format_double(r.consumption)});
}

}  // namespace fep
