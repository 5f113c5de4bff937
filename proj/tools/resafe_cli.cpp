// resafe: closed-loop runs, benchmark matrices and scenario validation.
//
// Exit codes: 0 success, 1 usage, 2 scenario or config error, 3 solver hard
// failure (a cycle fell back to the previous input, or the plant aborted).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "resafe/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace resafe;

enum Exit { kOk = 0, kUsage = 1, kScenario = 2, kSolver = 3 };

std::optional<fs::path> env_output_dir() {
  const char* v = std::getenv(harness::kOutputDirEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return fs::path(v);
}

struct RunArgs {
  std::string scenario;
  std::string method;
  bool cbf = false;
  std::optional<int> regions, degree, nodes;
  std::optional<double> horizon;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_run(const RunArgs& a) {
  sim::Scenario sc;
  try {
    sc = harness::parse_scenario(a.scenario);
    sc.method = transcription::parse_method(a.method);
    sc.cbf = a.cbf;
    if (a.regions) sc.regions = *a.regions;
    if (a.degree) sc.degree = *a.degree;
    if (a.nodes) sc.nodes = *a.nodes;
    if (a.horizon) sc.horizon = *a.horizon;
    if (a.seed) sc.seed = *a.seed;
    sc.validate();
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenario;
  }

  sim::ClosedLoopLog log;
  try {
    log = sim::run_closed_loop(sc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolver;
  }

  const fs::path out = !a.out.empty() ? fs::path(a.out) : env_output_dir().value_or("resafe_out");
  fs::create_directories(out);
  harness::RunResult r;
  r.key = {sc.name, {sc.method, sc.cbf}, sc.method == transcription::Method::kDms ? 0 : sc.regions, sc.horizon, 0,
           sc.seed};
  r.log = log;
  const fs::path csv = out / harness::run_file_name(r.key);
  {
    std::ofstream f(csv);
    harness::write_log_csv(f, log);
  }
  const auto rows = harness::summarize({r});
  harness::write_summary_table(std::cout, rows);
  std::cout << "crash avoidance: " << sim::crash_avoidance_metric(log) << " %\n";
  std::cout << "log: " << csv.string() << '\n';

  int failures = 0;
  for (const auto& c : log.records) failures += c.solver_failed ? 1 : 0;
  if (log.aborted) {
    std::cerr << "error: simulation aborted: " << log.abort_reason << '\n';
    return kSolver;
  }
  if (failures > 0) {
    std::cerr << "error: " << failures << " cycle(s) fell back to the previous input after a solver failure\n";
    return kSolver;
  }
  return kOk;
}

int cmd_bench(const std::string& config, std::optional<int> jobs) {
  harness::BenchmarkConfig cfg;
  try {
    cfg = harness::parse_benchmark(config);
    if (jobs) cfg.jobs = *jobs;
    if (auto env = env_output_dir()) cfg.output_dir = *env;
    cfg.validate();
    for (const auto& p : cfg.scenarios) (void)harness::parse_scenario(p);
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenario;
  }
  const harness::BenchmarkResult res = harness::run_benchmark(cfg);
  harness::write_summary_table(std::cout, res.summary);
  std::cout << "summary: " << (cfg.output_dir / "summary.csv").string() << '\n';
  return kOk;
}

int cmd_validate(const std::string& file) {
  try {
    const sim::Scenario sc = harness::parse_scenario(file);
    std::cout << "ok: " << sc.name << " (" << sc.obstacles.size() << " obstacle(s), path length "
              << sc.path.length() << " m, horizon " << sc.horizon << " s)\n";
    return kOk;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenario;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RESAFE/COL closed-loop simulation and benchmarks"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "simulate one scenario in closed loop");
  run->add_option("--scenario", ra.scenario, "scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--method", ra.method, "transcription")->required()->check(
      CLI::IsMember({"dms", "psc", "resafecol"}));
  run->add_flag("--cbf", ra.cbf, "add the exponential CBF constraint");
  run->add_option("--regions", ra.regions, "hull regions K");
  run->add_option("--degree", ra.degree, "spline degree M");
  run->add_option("--nodes", ra.nodes, "collocation nodes N");
  run->add_option("--horizon", ra.horizon, "prediction horizon [s]");
  run->add_option("--seed", ra.seed, "obstacle jitter seed");
  run->add_option("--out", ra.out, std::string("output directory (default $") + harness::kOutputDirEnv +
                                       " or ./resafe_out)");

  std::string config;
  std::optional<int> jobs;
  auto* bench = app.add_subcommand("bench", "run a benchmark matrix");
  bench->add_option("--config", config, "benchmark file")->required()->check(CLI::ExistingFile);
  bench->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  std::string vfile;
  auto* validate = app.add_subcommand("validate", "parse and validate a scenario file");
  validate->add_option("--scenario", vfile, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (*run) return cmd_run(ra);
  if (*bench) return cmd_bench(config, jobs);
  if (*validate) return cmd_validate(vfile);
  return kUsage;
}
