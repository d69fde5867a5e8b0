// SPDX-License-Identifier: Apache-2.0
// Command-line driver for enclave-tasking ADER-DG experiments.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "enclave/error.hpp"
#include "enclave/harness.hpp"

using namespace enclave;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitScheduling = 4;

int run(const ExperimentConfig& ex) {
  const SolverConfig& cfg = ex.solver;
  if (!ex.scaling_path.empty()) {
    auto rows = run_scaling_suite(cfg, ex.scaling_workers, ex.scaling_ranks, ex.repetitions);
    std::ofstream out(ex.scaling_path);
    if (!out) throw ConfigError("cannot open '" + ex.scaling_path + "' for writing");
    write_scaling_csv(out, rows);
    write_scaling_csv(std::cout, rows);
    if (!ex.report_path.empty()) {
      TimingReport r;
      r.mode = "scaling";
      r.scaling = rows;
      r.write_json(ex.report_path);
    }
    return 0;
  }

  SimulationResult result;
  if (ex.oracle)
    result = run_oracle(cfg);
  else if (ex.baseline_pfor)
    result = run_baseline(cfg);
  else
    result = run_simulation(cfg, ex.trace_path);

  std::printf("%s: %d steps, %lld cells, wall %.6f s\n", result.report.mode.c_str(), cfg.steps,
              static_cast<long long>(result.report.cells), result.report.wall_s);
  if (result.report.unconverged_predictors > 0)
    std::printf("warning: %lld predictor solves hit the iteration limit\n",
                static_cast<long long>(result.report.unconverged_predictors));
  if (!ex.dump_path.empty()) {
    const PolynomialBasis basis(cfg.order);
    dump_solution(ex.dump_path, result.mesh, result.solution, basis, make_pde(cfg.pde)->components());
  }
  if (!ex.report_path.empty()) result.report.write_json(ex.report_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Enclave-tasking ADER-DG simulator with simulated ranks"};
  ExperimentConfig ex;
  SolverConfig& cfg = ex.solver;
  std::string pde = cfg.pde, kernel = "aderdg", scheduler = "priority", ic = "sine", rank_mode = "parallel";
  std::string latency = "0", baseline;
  int nmin = cfg.scheduler.n_min, nmax = cfg.scheduler.n_max, workers = cfg.scheduler.workers;
  double deadlock_s = 30.0;

  app.add_option("--pde", pde, "advection or burgers")->check(CLI::IsMember({"advection", "burgers"}));
  app.add_option("--kernel", kernel, "aderdg, fv or synthetic")->check(CLI::IsMember({"aderdg", "fv", "synthetic"}));
  app.add_option("--order", cfg.order, "polynomial order p in [1, 7]");
  app.add_option("--picard-tol", cfg.picard_tol, "Picard convergence tolerance");
  app.add_option("--picard-max-iter", cfg.picard_max_iter, "Picard iteration limit (0: 2(p+1))");
  app.add_option("--synthetic-cost", cfg.synthetic_cost, "work units of the synthetic predictor");
  app.add_option("--depth", cfg.depth, "uniform base depth");
  app.add_option("--max-depth", cfg.max_depth, "mesh depth limit");
  app.add_option("--mesh", cfg.mesh_file, "mesh description file")->check(CLI::ExistingFile);
  app.add_flag("--non-periodic{false}", cfg.periodic, "outflow domain boundaries");
  app.add_flag("--amr", cfg.amr, "enable dynamic adaptivity");
  app.add_option("--refine-tol", cfg.refine_tol, "refine when the gradient indicator exceeds this");
  app.add_option("--coarsen-tol", cfg.coarsen_tol, "coarsen when the gradient indicator is below this");
  app.add_option("--max-level", cfg.max_level, "finest refinement level");
  app.add_option("--cfl", cfg.cfl, "CFL safety factor");
  app.add_option("--scheduler", scheduler, "native, fifo or priority")
      ->check(CLI::IsMember({"native", "fifo", "priority"}));
  app.add_option("--nmin", nmin, "queue items per consumer before forking");
  app.add_option("--nmax", nmax, "tasks per consumer activation");
  app.add_option("--workers", workers, "workers per rank, traversal agent included");
  app.add_option("--deadlock-timeout", deadlock_s, "seconds without progress before a wait fails");
  app.add_option("--trace", ex.trace_path, "write the task trace CSV here");
  app.add_option("--ranks", cfg.ranks, "number of simulated ranks");
  app.add_option("--latency-ns", latency, "channel latency, <ns> or <min>:<max>");
  app.add_option("--rank-mode", rank_mode, "parallel or interleaved")
      ->check(CLI::IsMember({"parallel", "interleaved"}));
  app.add_option("--seed", cfg.seed, "latency RNG seed");
  app.add_option("--steps", cfg.steps, "number of time steps");
  app.add_option("--ic", ic, "const, sine or step")->check(CLI::IsMember({"const", "constant", "sine", "step"}));
  app.add_option("--ic-value", cfg.ic_value, "value of the constant initial condition");
  app.add_flag("--fused", cfg.fused, "spawn next-step predictors inside the primary sweep");
  app.add_option("--dump", ex.dump_path, "write the final solution CSV here");
  app.add_option("--report", ex.report_path, "write the timing report JSON here");
  app.add_option("--baseline", baseline, "run the parallel-for baseline instead")->check(CLI::IsMember({"pfor"}));
  app.add_flag("--oracle", ex.oracle, "run the serial three-phase reference instead");
  app.add_option("--scaling", ex.scaling_path, "run the scaling suite and write its CSV here");
  app.add_option("--scaling-workers", ex.scaling_workers, "worker counts of the scaling suite")->delimiter(',');
  app.add_option("--scaling-ranks", ex.scaling_ranks, "rank counts of the scaling suite")->delimiter(',');
  app.add_option("--repetitions", ex.repetitions, "repetitions per scaling point");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    cfg.pde = pde;
    cfg.kernel = parse_kernel(kernel);
    cfg.ic = parse_ic(ic);
    cfg.rank_mode = parse_rank_mode(rank_mode);
    cfg.latency = LatencyModel::parse(latency);
    cfg.scheduler.variant = parse_variant(scheduler);
    cfg.scheduler.n_min = nmin;
    cfg.scheduler.n_max = nmax;
    cfg.scheduler.workers = workers;
    cfg.scheduler.deadlock_timeout = std::chrono::milliseconds(static_cast<long long>(deadlock_s * 1000));
    cfg.trace = !ex.trace_path.empty() || !ex.report_path.empty();
    ex.baseline_pfor = baseline == "pfor";
    if (ex.oracle && ex.baseline_pfor) throw ConfigError("--oracle and --baseline are exclusive");
    cfg.validate();
    return run(ex);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CapacityError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidTargetError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const SchedulingError& e) {
    std::cerr << "scheduling violation: " << e.what() << '\n';
    return kExitScheduling;
  } catch (const TraversalAbort& e) {
    std::cerr << "scheduling violation: " << e.what() << '\n';
    return kExitScheduling;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
