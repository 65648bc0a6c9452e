#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "support.hpp"
#include "vfmap/field.hpp"

namespace fs = std::filesystem;
using vfmap::testing::read_text;
using vfmap::testing::ScratchDir;
using vfmap::testing::write_text;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run_cli(const ScratchDir& dir, const std::string& args) {
  const auto o = dir.file("stdout.txt"), e = dir.file("stderr.txt");
  const std::string cmd = std::string(VFMAP_CLI_PATH) + " " + args + " >" + o + " 2>" + e;
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(o);
  r.err = read_text(e);
  return r;
}

const char* kSmallOracle = R"({
  "oracle": {"n_rows": 30, "n_cols": 10, "stress_levels": [330, 370, 400, 430], "noise_sigma": 0.00014,
             "yield": {"shape": "uniform"}},
  "identification": {"multistart_iterations": 2, "phase1_max_iterations": 8},
  "optimizer": {"max_iterations": 6},
  "seed": 4
})";

} // namespace

TEST(Cli, GenerateWritesConsistentFiles) {
  ScratchDir d("cli_gen");
  write_text(d.file("c.json"), kSmallOracle);
  const auto r = run_cli(d, "generate --config " + d.file("c.json") + " --out " + d.file("out"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto f : {"strains.csv", "loads.csv", "target_yield.csv", "target_hardening.csv", "manifest.csv",
                 "effective_config.json"})
    EXPECT_TRUE(fs::exists(d.file("out/" + std::string(f)))) << f;
  const auto h = vfmap::ingest_strain_csv(d.file("out/strains.csv"), d.file("out/loads.csv"), {});
  EXPECT_EQ(h.n_steps(), 4u);
  EXPECT_EQ(h.grid.valid_count(), 300u);
  EXPECT_NE(r.out.find("steps: 4"), std::string::npos);
  EXPECT_NE(read_text(d.file("out/manifest.csv")).find("# noise=0.00014"), std::string::npos);
}

TEST(Cli, CleanDatasetFlaggedInManifest) {
  ScratchDir d("cli_clean");
  write_text(d.file("c.json"), R"({"oracle": {"n_rows": 10, "n_cols": 5, "noise_sigma": 0}})");
  ASSERT_EQ(run_cli(d, "generate --config " + d.file("c.json") + " --out " + d.file("out")).code, 0);
  EXPECT_NE(read_text(d.file("out/manifest.csv")).find("# noise=0\n"), std::string::npos);
}

TEST(Cli, ValidationErrorsExitTwo) {
  ScratchDir d("cli_bad");
  write_text(d.file("forces.json"), R"({"oracle": {"stress_levels": [300, 200]}})");
  auto r = run_cli(d, "generate --config " + d.file("forces.json") + " --out " + d.file("o1"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("oracle.stress_levels"), std::string::npos) << r.err;

  write_text(d.file("key.json"), R"({"oracle": {}, "metrics": {"lamda": 0.2}})");
  r = run_cli(d, "generate --config " + d.file("key.json") + " --out " + d.file("o2"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("metrics.lamda"), std::string::npos) << r.err;

  write_text(d.file("missing.json"),
             R"({"input": {"strain_csv": "s.csv", "load_csv": "nowhere.csv", "meta": {"thickness": 1}}})");
  write_text(d.file("s.csv"), "");
  r = run_cli(d, "identify --config " + d.file("missing.json") + " --out " + d.file("o3"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nowhere.csv"), std::string::npos) << r.err;

  r = run_cli(d, "generate --config " + d.file("absent.json"));
  EXPECT_EQ(r.code, 2);
  r = run_cli(d, "frobnicate");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, HomogeneousOracleLedgerAndDeterminism) {
  ScratchDir d("cli_id");
  write_text(d.file("c.json"), kSmallOracle);
  const auto a = run_cli(d, "identify --config " + d.file("c.json") + " --out " + d.file("a"));
  const auto b = run_cli(d, "identify --config " + d.file("c.json") + " --out " + d.file("b"));
  // heterogeneity requested but nothing accepted on homogeneous data
  EXPECT_EQ(a.code, 3) << a.err;
  EXPECT_EQ(b.code, 3);
  std::istringstream ledger(read_text(d.file("a/ledger.csv")));
  std::string header, row1, row2, extra;
  std::getline(ledger, header);
  std::getline(ledger, row1);
  std::getline(ledger, row2);
  EXPECT_EQ(row1.rfind("0,phase1,0,", 0), 0u) << row1;
  EXPECT_EQ(row2.rfind("1,rejected,", 0), 0u) << row2;
  EXPECT_FALSE(std::getline(ledger, extra));
  for (auto f : {"identified_yield.csv", "identified_hardening.csv", "scheme.json", "reliability_mask.csv",
                 "yield_error_pct.csv", "phase1_trace.csv", "timing.csv"})
    EXPECT_TRUE(fs::exists(d.file("a/" + std::string(f)))) << f;
  EXPECT_EQ(read_text(d.file("a/manifest.csv")), read_text(d.file("b/manifest.csv")));
}

TEST(Cli, ReportOnExactMapsGivesZeroError) {
  ScratchDir d("cli_rep");
  write_text(d.file("g.json"), R"({"oracle": {"n_rows": 30, "n_cols": 10}})");
  ASSERT_EQ(run_cli(d, "generate --config " + d.file("g.json") + " --out " + d.file("data")).code, 0);
  fs::create_directories(d.file("id"));
  fs::copy_file(d.file("data/target_yield.csv"), d.file("id/identified_yield.csv"));
  fs::copy_file(d.file("data/target_hardening.csv"), d.file("id/identified_hardening.csv"));
  write_text(d.file("r.json"), R"({"input": {"strain_csv": "data/strains.csv", "load_csv": "data/loads.csv",
                                             "meta": {"spacing_x": 0.5, "spacing_y": 0.5, "thickness": 1.8}},
                                   "target_csv": "data/target_yield.csv"})");
  const auto r = run_cli(d, "report --config " + d.file("r.json") + " --out " + d.file("id"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = vfmap::ingest_strain_csv(d.file("data/strains.csv"), d.file("data/loads.csv"), {}).grid;
  const auto e = vfmap::ingest_scalar_csv(g, d.file("id/report/yield_error_pct.csv"));
  for (std::size_t p = 0; p < g.size(); ++p) EXPECT_EQ(e[p], 0.0);
  EXPECT_TRUE(fs::exists(d.file("id/report/egi_combined.csv")));

  // without a target only the metric maps are written
  write_text(d.file("n.json"), R"({"input": {"strain_csv": "data/strains.csv", "load_csv": "data/loads.csv"}})");
  fs::remove_all(d.file("id/report"));
  ASSERT_EQ(run_cli(d, "report --config " + d.file("n.json") + " --out " + d.file("id")).code, 0);
  EXPECT_FALSE(fs::exists(d.file("id/report/yield_error_pct.csv")));
  EXPECT_TRUE(fs::exists(d.file("id/report/fre_slices.csv")));
}

TEST(Cli, EffectiveConfigIsReingestable) {
  ScratchDir d("cli_eff");
  write_text(d.file("c.json"), R"({"oracle": {"n_rows": 12, "n_cols": 6}, "seed": 3})");
  ASSERT_EQ(run_cli(d, "generate --config " + d.file("c.json") + " --out " + d.file("a")).code, 0);
  const auto r = run_cli(d, "generate --config " + d.file("a/effective_config.json") + " --out " + d.file("b"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text(d.file("a/manifest.csv")), read_text(d.file("b/manifest.csv")));
}

TEST(Cli, MetricsAtTruthAreSmall) {
  ScratchDir d("cli_met");
  write_text(d.file("c.json"), R"({"oracle": {"n_rows": 30, "n_cols": 10, "noise_sigma": 0, "yield": {"shape": "uniform"}},
                                   "parameters": {"yield": {"designation": "homogeneous", "initial": 360},
                                                  "hardening": {"initial": 3700}}})");
  const auto r = run_cli(d, "metrics --config " + d.file("c.json") + " --out " + d.file("m"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_text(d.file("m/metrics_summary.json")));
  EXPECT_LT(j["fre_rms"].get<double>(), 1e-10);
  for (const auto& w : j["egi_rms"]) EXPECT_LT(w["value"].get<double>(), 1e-10);
}
