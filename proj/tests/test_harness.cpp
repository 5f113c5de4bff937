#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "resafe/harness.hpp"

namespace fs = std::filesystem;
namespace rh = resafe::harness;
namespace rs = resafe::sim;
namespace rt = resafe::transcription;

namespace {

const char* kMinimal = R"(schema: 1
path:
  breakpoints: [0, 200]
  curvature: [0, 0]
  width_left: [3.5, 3.5]
  width_right: [3.5, 3.5]
)";

fs::path scenario_dir() { return fs::path(RESAFE_SCENARIO_DIR); }

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool is_scenario(const fs::path& p) { return slurp(p).find("\npath:") != std::string::npos; }

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("resafe_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Scenario, MinimalFileGetsDocumentedDefaults) {
  const rs::Scenario sc = rh::parse_scenario_text(kMinimal);
  EXPECT_EQ(sc.regions, 3);
  EXPECT_EQ(sc.degree, 5);
  EXPECT_EQ(sc.nodes, 6);
  EXPECT_DOUBLE_EQ(sc.horizon, 3.0);
  EXPECT_EQ(sc.method, rt::Method::kResafeCol);
  EXPECT_FALSE(sc.cbf);
  EXPECT_TRUE(sc.obstacles.empty());
  EXPECT_DOUBLE_EQ(sc.gains.k1, 1.6);
  EXPECT_DOUBLE_EQ(sc.gains.k2, 1.1);
}

TEST(Scenario, CurvatureWidthSingularityRejected) {
  // kappa * w_left = 0.25 * 4 = 1.
  const std::string text = R"(schema: 1
path:
  breakpoints: [0, 50]
  curvature: [0.25, 0.25]
  width_left: [4, 4]
  width_right: [2, 2]
)";
  try {
    (void)rh::parse_scenario_text(text, "bend.yaml");
    FAIL() << "expected a scenario error";
  } catch (const rh::ScenarioError& e) {
    EXPECT_EQ(e.field(), "path");
    EXPECT_NE(std::string(e.what()).find("bend.yaml"), std::string::npos);
  }
}

TEST(Scenario, UnknownFieldReportsLineAndField) {
  const std::string text = std::string(kMinimal) + "obstacles:\n  - {s: 40, colour: red}\n";
  try {
    (void)rh::parse_scenario_text(text, "typo.yaml");
    FAIL() << "expected a scenario error";
  } catch (const rh::ScenarioError& e) {
    EXPECT_EQ(e.line(), 8);
    EXPECT_EQ(e.field(), "obstacles[0].colour");
    EXPECT_NE(std::string(e.what()).find("typo.yaml:8"), std::string::npos) << e.what();
  }
}

TEST(Scenario, SchemaAndTypeErrors) {
  EXPECT_THROW(rh::parse_scenario_text("schema: 2\npath: {}\n"), rh::ScenarioError);
  EXPECT_THROW(rh::parse_scenario_text("path:\n  breakpoints: [0, 1]\n"), rh::ScenarioError);
  EXPECT_THROW(rh::parse_scenario_text(std::string(kMinimal) + "horizon: soon\n"), rh::ScenarioError);
  EXPECT_THROW(rh::parse_scenario_text(std::string(kMinimal) + "controller: {method: rk4}\n"), rh::ScenarioError);
  EXPECT_THROW(rh::parse_scenario_text(std::string(kMinimal) + "obstacles:\n  - {s: 40, w: 9}\n"),
               rh::ScenarioError);
}

TEST(Scenario, WriterRoundTripMatchesNormalizer) {
  int checked = 0;
  for (const auto& entry : fs::directory_iterator(scenario_dir())) {
    if (entry.path().extension() != ".yaml" || !is_scenario(entry.path())) continue;
    const std::string text = slurp(entry.path());
    const rs::Scenario sc = rh::parse_scenario_text(text, entry.path().string());
    EXPECT_EQ(rh::write_scenario(sc), rh::normalize_scenario_text(text)) << entry.path();
    // The written form parses back to itself.
    EXPECT_EQ(rh::write_scenario(rh::parse_scenario_text(rh::write_scenario(sc))), rh::write_scenario(sc));
    ++checked;
  }
  EXPECT_GE(checked, 12);
}

TEST(Scenario, ShippedScenariosValidate) {
  for (const auto& entry : fs::directory_iterator(scenario_dir())) {
    if (entry.path().extension() != ".yaml") continue;
    if (is_scenario(entry.path())) {
      EXPECT_NO_THROW((void)rh::parse_scenario(entry.path())) << entry.path();
    } else {
      EXPECT_NO_THROW((void)rh::parse_benchmark(entry.path())) << entry.path();
    }
  }
}

TEST(Benchmark, MethodSpecs) {
  EXPECT_EQ(rh::parse_method_spec("dms").method, rt::Method::kDms);
  EXPECT_FALSE(rh::parse_method_spec("psc").cbf);
  const rh::MethodSpec m = rh::parse_method_spec("resafecol+cbf");
  EXPECT_EQ(m.method, rt::Method::kResafeCol);
  EXPECT_TRUE(m.cbf);
  EXPECT_EQ(m.label(), "resafecol+cbf");
  EXPECT_THROW(rh::parse_method_spec("dms+cbf"), resafe::DomainError);
  EXPECT_THROW(rh::parse_method_spec("+cbf"), resafe::DomainError);
  EXPECT_THROW(rh::parse_method_spec("ocp"), resafe::DomainError);
}

TEST(Benchmark, ConfigPathsAreRelativeToTheFile) {
  const rh::BenchmarkConfig cfg = rh::parse_benchmark_text(
      "schema: 1\nscenarios: [a.yaml, /abs/b.yaml]\nmethods: [dms, resafecol+cbf]\nregions: [1, 2]\noutput: out\n",
      "/cfg/dir");
  ASSERT_EQ(cfg.scenarios.size(), 2u);
  EXPECT_EQ(cfg.scenarios[0], fs::path("/cfg/dir/a.yaml"));
  EXPECT_EQ(cfg.scenarios[1], fs::path("/abs/b.yaml"));
  EXPECT_EQ(cfg.output_dir, fs::path("/cfg/dir/out"));
  EXPECT_EQ(cfg.regions, (std::vector<int>{1, 2}));
  EXPECT_THROW(rh::parse_benchmark_text("schema: 1\nscenarios: [a.yaml]\nmethods: []\n", "/"), rh::ScenarioError);
  EXPECT_THROW(rh::parse_benchmark_text("schema: 1\nscenarios: [a.yaml]\nmethods: [psc]\nregions: [0]\n", "/"),
               rh::ScenarioError);
}

TEST(Benchmark, ExpansionOrderAndDmsIgnoresRegions) {
  rh::BenchmarkConfig cfg;
  cfg.scenarios = {"x"};
  cfg.methods = {rh::parse_method_spec("dms"), rh::parse_method_spec("psc")};
  cfg.regions = {2, 4};
  cfg.repetitions = 2;
  rs::Scenario sc;
  sc.name = "x";
  sc.seed = 7;
  const auto tasks = rh::expand(cfg, {sc});
  ASSERT_EQ(tasks.size(), 2u + 4u);
  EXPECT_EQ(tasks[0].first.regions, 0);
  EXPECT_EQ(tasks[1].first.seed, 8u);
  EXPECT_EQ(tasks[2].first.regions, 2);
  EXPECT_EQ(tasks[4].first.regions, 4);
  EXPECT_EQ(tasks[4].second.regions, 4);
  EXPECT_EQ(rh::run_file_name(tasks[5].first), "x__psc__K4__tf3__r1.csv");
}

TEST(Benchmark, Statistics) {
  EXPECT_DOUBLE_EQ(rh::percentile({5, 1, 4, 2, 3}, 95), 5.0);
  EXPECT_DOUBLE_EQ(rh::percentile({5, 1, 4, 2, 3}, 40), 2.0);
  EXPECT_DOUBLE_EQ(rh::median({4, 1, 3, 2}), 2.5);
  EXPECT_DOUBLE_EQ(rh::percentile({}, 50), 0.0);
}

TEST(Benchmark, NoObstaclesReportsFullAvoidance) {
  const fs::path dir = fresh_dir("bench");
  {
    std::ofstream s(dir / "clear.yaml");
    s << kMinimal << "name: clear\ninitial_state: {vx: 10}\ntarget_speed: 10\nduration: 0.5\nhorizon: 1.75\n";
    std::ofstream b(dir / "bench.yaml");
    b << "schema: 1\nscenarios: [clear.yaml]\nmethods: [resafecol, psc]\njobs: 2\noutput: out\n";
  }
  const rh::BenchmarkConfig cfg = rh::parse_benchmark(dir / "bench.yaml");
  const rh::BenchmarkResult res = rh::run_benchmark(cfg);
  ASSERT_EQ(res.summary.size(), 2u);
  for (const auto& row : res.summary) {
    EXPECT_DOUBLE_EQ(row.crash_avoidance, 100.0) << row.method;
    EXPECT_EQ(row.detection_cycles, 0);
    EXPECT_EQ(row.cycles, 10);
    EXPECT_EQ(row.num_primal, 60);
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "runs" / "clear__psc__K3__tf1.75__r0.csv"));
  const std::string summary = slurp(dir / "out" / "summary.csv");
  EXPECT_NE(summary.find("crash_avoidance_pct"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Benchmark, LogCsvHasOneRowPerCycle) {
  rs::ClosedLoopLog log;
  log.records.resize(3);
  log.records[1].h = {0.5, std::nan("")};
  std::ostringstream out;
  rh::write_log_csv(out, log);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_EQ(text.rfind("time,s,w,", 0), 0u);
}
