#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <vector>

#include "fep/experiment.hpp"
#include "oulad_fixture.hpp"

using namespace fep;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "fep_cli_tests";

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

struct Result {
  int code;
  std::string out, err;
};

Result cli(const std::string& args) {
  const auto out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  fs::create_directories(kWork);
  std::string cmd = std::string(FEP_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read(out), read(err)};
}

std::string synthetic_config(const fs::path& out_dir, const std::string& seeds = "1,2,3",
                             const std::string& extra = "") {
  return "[synthetic]\nn_students = 200\nn_checkpoints = 4\ncourse_length_days = 120\n\n"
         "[learner]\nn_rounds = 20\n\n"
         "[run]\nseeds = " + seeds + "\noutput_dir = " + out_dir.string() + "\n" + extra;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { fs::create_directories(kWork); }
};

}  // namespace

TEST_F(Cli, RunWritesPerSeedReportsAggregateAndManifest) {
  auto cfg = kWork / "run3.ini";
  auto out = kWork / "run3";
  fs::remove_all(out);
  write(cfg, synthetic_config(out));
  auto r = cli("run --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (int s : {1, 2, 3}) {
    auto dir = out / ("seed_" + std::to_string(s));
    for (const char* f : {"metrics.csv", "predictions_ss.csv", "predictions_ms.csv", "predictions_fep.csv",
                          "ledger_fep.csv", "gate.csv"})
      EXPECT_TRUE(fs::exists(dir / f)) << dir / f;
  }
  for (const char* f : {"aggregate.csv", "manifest.ini", "plot_ess.csv", "data_report.txt"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  std::size_t seed_dirs = 0;
  for (const auto& e : fs::directory_iterator(out)) seed_dirs += e.is_directory();
  EXPECT_EQ(seed_dirs, 3u);
  auto manifest = read(out / "manifest.ini");
  EXPECT_NE(manifest.find("software_version = 1.0.0"), std::string::npos);
  EXPECT_NE(manifest.find("n_students = 200"), std::string::npos);
  EXPECT_NE(read(out / "data_report.txt").find("features ("), std::string::npos);
}

// The aggregate is recomputed here from the per-seed CSVs alone.
TEST_F(Cli, AggregateIsRecomputableFromPerSeedFiles) {
  auto cfg = kWork / "agg.ini";
  auto out = kWork / "agg";
  fs::remove_all(out);
  write(cfg, synthetic_config(out, "2,7,5"));
  ASSERT_EQ(cli("run --config " + cfg.string()).code, 0);

  const std::vector<std::string> metrics{"accuracy", "earliness", "stability", "ess"};
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> samples;
  for (const char* seed : {"seed_2", "seed_7", "seed_5"}) {
    auto reader = csv::Reader::from_file((out / seed / "metrics.csv").string());
    std::vector<std::string> f;
    std::size_t line = 0;
    ASSERT_TRUE(reader.next(f, line));
    ASSERT_EQ(f, metrics_csv_header());
    while (reader.next(f, line)) {
      if (f.size() == 1 && f[0].empty()) continue;
      ASSERT_EQ(f.size(), 7u);
      if (f[1] == "all") {
        samples[{f[0], "all", "consumption"}].push_back(std::stod(f[6]));
        continue;
      }
      for (std::size_t k = 0; k < metrics.size(); ++k)
        samples[{f[0], f[1], metrics[k]}].push_back(std::stod(f[2 + k]));
    }
  }
  const auto rows = read_aggregate(out / "aggregate.csv");
  ASSERT_EQ(rows.size(), samples.size());
  for (const auto& r : rows) {
    const auto& v = samples.at({r.model, r.checkpoint, r.metric});
    ASSERT_EQ(v.size(), r.n);
    double mean = 0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    EXPECT_NEAR(r.mean, mean, 1e-12) << r.model << " " << r.checkpoint << " " << r.metric;
    EXPECT_NEAR(r.std, sd, 1e-12) << r.model << " " << r.checkpoint << " " << r.metric;
  }
}

TEST_F(Cli, RerunAndThreadCountGiveByteIdenticalMetrics) {
  auto cfg = kWork / "det.ini";
  auto a = kWork / "det_a", b = kWork / "det_b";
  write(cfg, synthetic_config(a, "4,5"));
  ASSERT_EQ(cli("run --config " + cfg.string() + " --jobs 1").code, 0);
  write(cfg, synthetic_config(b, "4,5"));
  ASSERT_EQ(cli("run --config " + cfg.string() + " --jobs 3").code, 0);
  for (const char* s : {"seed_4", "seed_5"}) {
    EXPECT_EQ(read(a / s / "metrics.csv"), read(b / s / "metrics.csv"));
    EXPECT_EQ(read(a / s / "predictions_fep.csv"), read(b / s / "predictions_fep.csv"));
  }
  EXPECT_EQ(read(a / "aggregate.csv"), read(b / "aggregate.csv"));
}

TEST_F(Cli, ManifestAloneReproducesTheRun) {
  auto cfg = kWork / "orig.ini";
  auto out = kWork / "orig";
  fs::remove_all(out);
  write(cfg, synthetic_config(out, "9"));
  ASSERT_EQ(cli("run --config " + cfg.string()).code, 0);
  const auto first = read(out / "seed_9" / "metrics.csv");
  auto manifest = read(out / "manifest.ini");
  // Point the rerun elsewhere, leaving everything else untouched.
  auto rerun = kWork / "rerun";
  auto pos = manifest.find("output_dir = ");
  manifest = manifest.substr(0, pos) + "output_dir = " + rerun.string() + "\n";
  write(kWork / "rerun.ini", manifest);
  auto r = cli("run --config " + (kWork / "rerun.ini").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read(rerun / "seed_9" / "metrics.csv"), first);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  auto out = kWork / "bad";
  auto check = [&](const std::string& text, const std::string& needle) {
    write(kWork / "bad.ini", text);
    auto r = cli("run --config " + (kWork / "bad.ini").string());
    EXPECT_EQ(r.code, 2) << text;
    EXPECT_NE(r.err.find(needle), std::string::npos) << r.err;
  };
  check("[data]\noulad_dir = /tmp\n" + synthetic_config(out), "exactly one");
  check("[run]\nseeds = 1\noutput_dir = x\n", "exactly one");
  check(synthetic_config(out, ""), "run.seeds");
  check(synthetic_config(out, "1", "colour = blue\n"), "run.colour");
  check(synthetic_config(out) + "[learner]\n", "");
  check("[synthetic]\nn_students = many\n[run]\nseeds = 1\noutput_dir = x\n", "synthetic.n_students");
  check(synthetic_config(out, "1", "test_fraction = 1.5\n"), "run.test_fraction");
  check("[gate]\nthreshold = 0.4\n" + synthetic_config(out), "outside (0.5, 1]");
  check("[gate]\ncalibration = sometimes\n" + synthetic_config(out), "gate.calibration");
  check("[run\n", "bad.ini:1");
  EXPECT_EQ(cli("run --config " + (kWork / "does_not_exist.ini").string()).code, 2);
  EXPECT_EQ(cli("run").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(Cli, CalibratedFixedGateRecordsPlattParameters) {
  auto out = kWork / "calibrated";
  fs::remove_all(out);
  write(kWork / "calibrated.ini",
        "[gate]\nthreshold = 0.9\ncalibration = holdout_tuned\n" + synthetic_config(out, "1"));
  auto r = cli("run --config " + (kWork / "calibrated.ini").string());
  ASSERT_EQ(r.code, 0) << r.err;
  auto gate = read(out / "seed_1" / "gate.csv");
  EXPECT_EQ(gate.substr(0, gate.find('\n')), "threshold,holdout_accuracy,holdout_consumption,chosen,platt_slope,platt_intercept");
  EXPECT_EQ(std::count(gate.begin(), gate.end(), '\n'), 2);
  EXPECT_EQ(gate.back(), '\n');
  EXPECT_EQ(gate.find(",,\n"), std::string::npos) << gate;
  EXPECT_NE(read(out / "manifest.ini").find("calibration = holdout_tuned"), std::string::npos);
}

TEST_F(Cli, NeverFiringGateMakesFepRowsEqualSs) {
  auto out = kWork / "nofire";
  fs::remove_all(out);
  write(kWork / "nofire.ini", "[gate]\nthreshold = 0.5000000001\n" + synthetic_config(out, "1,2"));
  ASSERT_EQ(cli("run --config " + (kWork / "nofire.ini").string()).code, 0);
  auto r = cli("report " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  // Compare numeric cells; label widths differ between rows.
  auto cells = [](const std::string& row) {
    std::istringstream in(row);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;)
      if (tok != "SS" && tok != "FEP" && tok != "Model") out.push_back(tok);
    return out;
  };
  std::istringstream lines(r.out);
  std::string line, ss_std;
  std::vector<std::string> ss_row;
  int tables = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("SS Model", 0) == 0) {
      ss_row = cells(line);
      std::getline(lines, ss_std);
    }
    if (line.rfind("FEP Model", 0) == 0) {
      EXPECT_EQ(cells(line), ss_row);
      std::string fep_std;
      std::getline(lines, fep_std);
      EXPECT_EQ(cells(fep_std), cells(ss_std));
      ++tables;
    }
  }
  EXPECT_EQ(tables, 2);
  EXPECT_NE(r.out.find("FEP 1.00"), std::string::npos);
}

TEST_F(Cli, ReportLayoutAndConsumptionLine) {
  // Hand-built run directory: FEP gates 323 of 694 students.
  auto dir = kWork / "handmade";
  fs::remove_all(dir);
  write(dir / "manifest.ini", "[run]\nseeds = 1\n");
  write(dir / "seed_1" / "metrics.csv", "");
  std::ostringstream agg;
  agg << "model,checkpoint_day,metric,mean,std,n\n";
  for (const char* m : {"SS", "MS", "FEP"}) {
    for (int day : {7, 12, 18})
      for (const char* metric : {"accuracy", "ess"}) agg << m << "," << day << "," << metric << ",0.75,0.01,1\n";
  }
  agg << "SS,all,consumption,1,0,1\nMS,all,consumption,2,0,1\nFEP,all,consumption," << (1.0 + 323.0 / 694.0)
      << ",0,1\n";
  write(dir / "aggregate.csv", agg.str());
  std::ostringstream out;
  render_report(dir, out);
  auto text = out.str();
  EXPECT_NE(text.find("Data consumption: SS 1.00, MS 2.00, FEP 1.46, reduction 27%"), std::string::npos) << text;
  EXPECT_NE(text.find("7th"), std::string::npos);
  EXPECT_NE(text.find("12th"), std::string::npos);
  EXPECT_NE(text.find("18th"), std::string::npos);
  EXPECT_NE(text.find("Accuracy"), std::string::npos);
  EXPECT_NE(text.find("ESS"), std::string::npos);
  EXPECT_NE(text.find("MS Model"), std::string::npos);
}

TEST(Ordinal, Suffixes) {
  EXPECT_EQ(ordinal(1), "1st");
  EXPECT_EQ(ordinal(2), "2nd");
  EXPECT_EQ(ordinal(3), "3rd");
  EXPECT_EQ(ordinal(11), "11th");
  EXPECT_EQ(ordinal(12), "12th");
  EXPECT_EQ(ordinal(13), "13th");
  EXPECT_EQ(ordinal(22), "22nd");
  EXPECT_EQ(ordinal(109), "109th");
  EXPECT_EQ(ordinal(111), "111th");
}

TEST_F(Cli, IncompleteRunExitsThreeNamingTheArtifact) {
  auto empty = kWork / "empty_run";
  fs::remove_all(empty);
  fs::create_directories(empty);
  auto r = cli("report " + empty.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("manifest.ini"), std::string::npos);
  EXPECT_EQ(cli("report " + (kWork / "never_created").string()).code, 3);

  auto out = kWork / "partial";
  fs::remove_all(out);
  write(kWork / "partial.ini", synthetic_config(out, "1,2"));
  ASSERT_EQ(cli("run --config " + (kWork / "partial.ini").string()).code, 0);
  fs::remove(out / "seed_2" / "metrics.csv");
  r = cli("report " + out.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("seed_2/metrics.csv"), std::string::npos) << r.err;
  fs::remove(out / "aggregate.csv");
  write(out / "seed_2" / "metrics.csv", "");
  r = cli("report " + out.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("aggregate.csv"), std::string::npos) << r.err;
}

TEST_F(Cli, SynthIsDeterministicAndValidates) {
  write(kWork / "spec.ini", "n_students = 50\nn_checkpoints = 3\ncourse_length_days = 60\n");
  auto a = kWork / "synth_a", b = kWork / "synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ASSERT_EQ(cli("synth --spec " + (kWork / "spec.ini").string() + " --seed 3 --out " + a.string()).code, 0);
  ASSERT_EQ(cli("synth --spec " + (kWork / "spec.ini").string() + " --seed 3 --out " + b.string()).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(read(e.path()), read(b / e.path().filename()));
  }
  EXPECT_EQ(files, 3u);
  EXPECT_TRUE(fs::exists(a / "primary.bundle"));
  EXPECT_TRUE(fs::exists(a / "additional.bundle"));
  EXPECT_TRUE(fs::exists(a / "schema.txt"));
  auto loaded = load_bundle(a / "primary.bundle");
  EXPECT_EQ(loaded.demographics.size(), 50u);

  write(kWork / "default.ini", "");
  auto d = kWork / "synth_default";
  fs::remove_all(d);
  EXPECT_EQ(cli("synth --spec " + (kWork / "default.ini").string() + " --seed 1 --out " + d.string()).code, 0);
  EXPECT_EQ(std::distance(fs::directory_iterator(d), fs::directory_iterator{}), 3);

  write(kWork / "zero.ini", "n_students = 0\n");
  EXPECT_EQ(cli("synth --spec " + (kWork / "zero.ini").string() + " --seed 1 --out " + (kWork / "z").string()).code,
            2);
}

TEST_F(Cli, OuladRunReportsCohortAgainstPublishedCounts) {
  SyntheticConfig spec;
  spec.n_students = 200;
  spec.n_checkpoints = 4;
  spec.course_length_days = 120;
  auto data_dir = kWork / "oulad";
  fs::remove_all(data_dir);
  auto fx = fixture::write_oulad_fixture(data_dir, generate_synthetic(spec, 5), 15);
  auto out = kWork / "oulad_run";
  fs::remove_all(out);
  write(kWork / "oulad.ini", "[data]\noulad_dir = " + data_dir.string() +
                                 "\ncourse_id = CCC\nsemester_id = 2014J\n[learner]\nn_rounds = 20\n"
                                 "[run]\nseeds = 1\noutput_dir = " + out.string() + "\n");
  auto r = cli("run --config " + (kWork / "oulad.ini").string());
  ASSERT_EQ(r.code, 0) << r.err;
  auto report = read(out / "data_report.txt");
  EXPECT_NE(report.find("cohort with a completed prior course: " + std::to_string(fx.cohort)), std::string::npos)
      << report;
  EXPECT_NE(report.find("published cohort: 694 (378 succeeded, 316 failed)"), std::string::npos);
  EXPECT_NE(report.find("cohort delta"), std::string::npos);
  EXPECT_NE(report.find("published checkpoint days: 7,12,18,32,67,109,144,158,207,214"), std::string::npos);
  auto shown = cli("report " + out.string());
  EXPECT_EQ(shown.code, 0);
  EXPECT_NE(shown.out.find("published cohort"), std::string::npos);

  write(kWork / "oulad_bad.ini", "[data]\noulad_dir = " + (kWork / "nowhere").string() +
                                     "\n[run]\nseeds = 1\noutput_dir = " + out.string() + "\n");
  r = cli("run --config " + (kWork / "oulad_bad.ini").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("missing OULAD file"), std::string::npos);
}

TEST(ExitCodes, ExceptionKindsMapToStatuses) {
  std::ostringstream err;
  EXPECT_EQ(guarded(err, [] {}), 0);
  EXPECT_EQ(guarded(err, [] { throw ConfigError("c"); }), 2);
  EXPECT_EQ(guarded(err, [] { throw DataError("d"); }), 3);
  EXPECT_EQ(guarded(err, [] { throw InvariantError("i"); }), 4);
  EXPECT_NE(err.str().find("invariant breach: i"), std::string::npos);
}
