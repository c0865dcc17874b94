#include <iostream>

#include "CLI11.hpp"
#include "fep/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Frugal early prediction of student outcomes"};
  app.set_version_flag("--version", std::string(fep::kVersion));
  app.require_subcommand(1);

  std::string config;
  int jobs = 1;
  auto* run = app.add_subcommand("run", "Run an experiment described by a config file");
  run->add_option("--config", config, "Experiment config (INI)")->required();
  run->add_option("--jobs", jobs, "Worker threads for per-seed runs")->check(CLI::PositiveNumber);

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Render tables from a finished run directory");
  report->add_option("RUN_DIR", run_dir, "Run output directory")->required();

  std::string spec, out;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", spec, "Synthetic spec (INI)")->required();
  synth->add_option("--seed", seed, "Random seed")->required();
  synth->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fep::kExitConfig;
  }

  if (*run) return fep::cmd_run(config, jobs, std::clog, std::cerr);
  if (*report) return fep::cmd_report(run_dir, std::cout, std::cerr);
  if (*synth) return fep::cmd_synth(spec, seed, out, std::cerr);
  return fep::kExitConfig;
}
