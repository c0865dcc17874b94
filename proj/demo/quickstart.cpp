// Generates a small synthetic course, compares the three models on one split
// and prints per-checkpoint accuracy and ESS plus data consumption.
#include <iostream>

#include "fep.hpp"

int main() {
  fep::SyntheticConfig spec;
  spec.n_students = 400;
  const auto data = fep::generate_synthetic(spec, 7);
  const auto schedule = fep::derive_schedule(data.primary);
  const auto cohort = data.primary.student_ids();
  const auto split = fep::stratified_split(data.primary, cohort, 0.2, 7);

  fep::LearnerConfig learner;
  learner.n_rounds = 50;
  const auto trainer = fep::boosted_trainer(learner);
  std::vector<fep::SourceBundle> additional{data.additional};

  const auto gate = fep::tune_gate(data.primary, additional, schedule, split.train, trainer, fep::kDefaultGateGrid, 7);
  const auto cmp = fep::compare_models(data.primary, additional, schedule, split, trainer, gate);

  std::cout << "gate threshold " << gate.threshold << "\n";
  for (const auto& r : {fep::evaluate("SS", cmp.ss, cmp.ss_ledger), fep::evaluate("MS", cmp.ms, cmp.ms_ledger),
                        fep::evaluate("FEP", cmp.fep, cmp.fep_ledger)}) {
    std::cout << r.model << ":";
    for (const auto& c : r.checkpoints)
      std::cout << "  day " << c.day << " acc " << fep::csv::format_fixed(c.accuracy, 2) << " ess "
                << fep::csv::format_fixed(c.ess, 2);
    std::cout << "\n  consumption " << fep::format_consumption(r.consumption) << "\n";
  }
}
