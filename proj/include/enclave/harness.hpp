// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "enclave/solver.hpp"

namespace enclave {

struct ExperimentConfig {
  SolverConfig solver;
  std::string dump_path;
  std::string report_path;
  std::string trace_path;
  std::string scaling_path;
  std::vector<int> scaling_workers{1, 2, 4, 8};
  std::vector<int> scaling_ranks;
  int repetitions = 3;
  bool oracle = false;
  bool baseline_pfor = false;
};

struct ScalingRow {
  int workers = 1;
  int ranks = 1;
  double wall_s = 0.0;
  double speedup = 1.0;
};

struct TimingReport {
  std::string mode;  // enclave, oracle, pfor
  double wall_s = 0.0;
  int steps = 0;
  std::int64_t cells = 0;
  std::int64_t dofs = 0;  // per step
  TaskTimes totals;
  // nanoseconds per degree of freedom per time step
  double stp_ns_per_dof = 0.0;
  double riemann_ns_per_dof = 0.0;
  double corrector_ns_per_dof = 0.0;
  std::vector<double> sweep_s;
  std::vector<RankReport> ranks;
  std::int64_t unconverged_predictors = 0;
  std::int64_t trace_dropped = 0;
  std::vector<ScalingRow> scaling;

  void write_json(std::ostream& out) const;
  void write_json(const std::string& path) const;
};

struct SimulationResult {
  Solution solution;
  Mesh mesh;
  TimingReport report;
  std::vector<TraceRecord> trace;
  std::int64_t redundant_mismatches = 0;
  std::int64_t redundant_checks = 0;
};

/// Enclave-tasking run of `config.steps` time steps.
SimulationResult run_simulation(const SolverConfig& config, const std::string& trace_path = {});

/// Serial three-phase reference run.
SimulationResult run_oracle(const SolverConfig& config);

/// Parallel-for reference run on a regular mesh with config.scheduler.workers threads.
SimulationResult run_baseline(const SolverConfig& config);

/// Median wall time over `repetitions` runs per (ranks, workers) pair;
/// speedup is relative to the first worker count of the same rank count.
std::vector<ScalingRow> run_scaling_suite(const SolverConfig& config, const std::vector<int>& workers,
                                          const std::vector<int>& ranks = {}, int repetitions = 3);
void write_scaling_csv(std::ostream& out, const std::vector<ScalingRow>& rows);

/// CSV `level,ix,iy,node_x,node_y,component,value`, SFC order then node order.
void dump_solution(std::ostream& out, const Mesh& mesh, const Solution& solution,
                   const PolynomialBasis& basis, int components);
void dump_solution(const std::string& path, const Mesh& mesh, const Solution& solution,
                   const PolynomialBasis& basis, int components);
/// Rebuilds cell data from a dump written with the same order.
Solution load_dump(const std::string& path, int order, int components);

/// Mean wall time of single kernel invocations on one cell.
struct KernelCosts {
  double stp_ns = 0.0;
  double riemann_ns = 0.0;
  double corrector_ns = 0.0;
  double fv_patch_ns = 0.0;
};
KernelCosts measure_kernel_costs(const SolverConfig& config, int repetitions = 200);

double median(std::vector<double> values);

}  // namespace enclave
