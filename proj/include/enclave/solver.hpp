// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <span>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "enclave/amr.hpp"
#include "enclave/basis.hpp"
#include "enclave/kernels.hpp"
#include "enclave/mesh.hpp"
#include "enclave/pde.hpp"
#include "enclave/ranks.hpp"
#include "enclave/scheduler.hpp"
#include "enclave/trace.hpp"

namespace enclave {

enum class KernelKind { AderDg, FiniteVolume, Synthetic };
enum class InitialCondition { Constant, Sine, Step };
enum class RankMode { Parallel, Interleaved };

KernelKind parse_kernel(const std::string& s);
InitialCondition parse_ic(const std::string& s);
RankMode parse_rank_mode(const std::string& s);

struct SolverConfig {
  std::string pde = "advection";
  KernelKind kernel = KernelKind::AderDg;
  int order = 3;
  double picard_tol = 1e-10;
  int picard_max_iter = 0;  // 0: 2(p+1)
  std::int64_t synthetic_cost = 0;

  int depth = 2;
  DomainBox box;
  bool periodic = true;
  int max_depth = Mesh::kDefaultMaxDepth;
  std::string mesh_file;

  bool amr = false;
  double refine_tol = 1e300;
  double coarsen_tol = 0.0;
  int max_level = 0;  // 0: depth (no refinement)

  double cfl = 0.4;
  InitialCondition ic = InitialCondition::Sine;
  double ic_value = 1.0;
  int steps = 1;
  bool fused = false;

  SchedulerConfig scheduler;
  int ranks = 1;
  LatencyModel latency;
  RankMode rank_mode = RankMode::Parallel;
  bool trace = false;
  std::uint64_t seed = 1;

  void validate() const;
  RefinementCriterion criterion() const;
};

using Solution = std::map<CellKey, std::vector<double>>;

/// Basis, PDE and kernel binding shared read-only by all ranks.
class Discretization {
 public:
  explicit Discretization(const SolverConfig& config);
  Discretization(const Discretization&) = delete;
  Discretization& operator=(const Discretization&) = delete;

  const SolverConfig& config() const { return config_; }
  const PolynomialBasis& basis() const { return basis_; }
  const Pde& pde() const { return *pde_; }
  const TransferOperators& transfer() const { return transfer_; }
  int components() const { return pde_->components(); }
  std::size_t volume_size() const;
  std::size_t trace_size() const;
  int picard_max_iter() const;

  /// Runs the configured predictor kernel on one cell.
  void predictor(const CellGeometry& geom, std::span<const double> q, double dt, Predictor& out,
                 FvPatch& scratch) const;
  std::int64_t unconverged_predictors() const { return unconverged_.load(); }

  /// Nodal values of the initial condition in one cell.
  std::vector<double> initial_values(const Mesh& mesh, const CellKey& key) const;

 private:
  SolverConfig config_;
  PolynomialBasis basis_;
  std::unique_ptr<Pde> pde_;
  TransferOperators transfer_;
  mutable std::atomic<std::int64_t> unconverged_{0};
};

struct InitialState {
  Mesh mesh;
  Solution solution;
};

/// Base mesh, optional description file, then refinement of the initial
/// condition up to the maximum level when adaptivity is on.
InitialState build_initial_state(const Discretization& disc);

/// Time-step rule shared by every execution path: constant for linear PDEs,
/// recomputed from the current solution otherwise.
class TimeStepRule {
 public:
  TimeStepRule(const Discretization& disc, const Mesh& mesh, const Solution& initial);
  bool constant() const { return constant_; }
  double constant_dt() const { return dt_; }
  double next(const Mesh& mesh, const Solution& solution) const;
  double from_samples(std::span<const double> h, std::span<const double> lambda) const;

 private:
  const Discretization& disc_;
  bool constant_;
  double dt_ = 0.0;
};

void check_finite(std::span<const double> q, const CellKey& key, int step);

/// Serial three-phase reference: predictors over cells, Riemann solves over
/// faces, correctors over cells, then mesh adaptation.
class Oracle {
 public:
  Oracle(const Discretization& disc, InitialState state);

  void step();
  void run(int steps);
  const Solution& solution() const { return solution_; }
  const Mesh& mesh() const { return mesh_; }
  int steps_done() const { return step_; }
  double last_dt() const { return dt_; }

 private:
  const Discretization& disc_;
  Mesh mesh_;
  Solution solution_;
  TimeStepRule rule_;
  int step_ = 0;
  double dt_ = 0.0;
};

/// Per-rank statistics of an enclave run.
struct RankReport {
  SchedulerStats scheduler;
  std::int64_t sends = 0;
  std::int64_t receives = 0;
};

class RankDriver;

/// Simulated multi-rank enclave-tasking run.
class World {
 public:
  World(const Discretization& disc, InitialState state);
  ~World();
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  void run(int steps);
  Solution solution() const;
  const Mesh& mesh() const;
  Tracer& tracer() { return tracer_; }
  int ranks() const { return static_cast<int>(ranks_.size()); }
  std::vector<RankReport> reports() const;
  const std::vector<double>& sweep_seconds() const { return sweep_seconds_; }
  /// Boundary faces whose two redundant Riemann outcomes differed.
  std::int64_t redundant_mismatches() const { return mismatches_; }
  std::int64_t redundant_checks() const { return redundant_checks_; }
  /// Coarsenings skipped because sibling votes disagreed.
  std::int64_t skipped_coarsenings() const { return skipped_; }

  // Used by RankDriver.
  const Discretization& disc() const { return disc_; }
  Network& network() { return network_; }
  void sync(const std::function<void()>& leader);
  void idle();
  void check_abort() const;
  bool interleaved() const { return disc_.config().rank_mode == RankMode::Interleaved; }

 private:
  friend class RankDriver;

  void rank_main(int rank, int first, int steps);
  void after_primary(int step);
  void apply_updates();

  const Discretization& disc_;
  Tracer tracer_;
  Network network_;
  std::vector<std::unique_ptr<RankDriver>> ranks_;
  std::unique_ptr<TimeStepRule> rule_;
  double dt_ = 0.0;
  int step_ = 0;
  UpdatePlan plan_;
  std::vector<double> sweep_seconds_;
  std::int64_t sweep_start_ns_ = 0;
  std::int64_t mismatches_ = 0;
  std::int64_t redundant_checks_ = 0;
  std::int64_t skipped_ = 0;

  std::mutex sync_mutex_;
  std::condition_variable sync_cv_;
  int arrived_ = 0;
  std::uint64_t generation_ = 0;
  std::atomic<bool> aborted_{false};
  std::exception_ptr first_error_;
  std::mutex baton_;
};

/// Three parallel loops separated by barriers on a regular mesh.
struct BaselineResult {
  Solution solution;
  double wall_s = 0.0;
};

BaselineResult parallel_for_baseline(const Discretization& disc, InitialState state, int steps,
                                     int workers);

}  // namespace enclave
