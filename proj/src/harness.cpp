// SPDX-License-Identifier: Apache-2.0
#include "enclave/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "enclave/error.hpp"
#include "json.hpp"

namespace enclave {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void fill_sizes(TimingReport& r, const Discretization& disc, const Mesh& mesh, int steps) {
  r.steps = steps;
  r.cells = static_cast<std::int64_t>(mesh.cells().size());
  r.dofs = r.cells * static_cast<std::int64_t>(disc.volume_size());
}

void fill_costs(TimingReport& r) {
  const double denom = static_cast<double>(r.dofs) * std::max(r.steps, 1);
  if (denom <= 0.0) return;
  r.stp_ns_per_dof = static_cast<double>(r.totals.stp_ns) / denom;
  r.riemann_ns_per_dof = static_cast<double>(r.totals.riemann_ns) / denom;
  r.corrector_ns_per_dof = static_cast<double>(r.totals.corrector_ns) / denom;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

void TimingReport::write_json(std::ostream& out) const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["wall_s"] = wall_s;
  j["steps"] = steps;
  j["cells"] = cells;
  j["dofs_per_step"] = dofs;
  j["totals_ns"] = {{"stp", totals.stp_ns},
                    {"riemann", totals.riemann_ns},
                    {"corrector", totals.corrector_ns},
                    {"agent_wait", totals.agent_wait_ns}};
  j["counts"] = {{"stp", totals.stp_count},
                 {"riemann", totals.riemann_count},
                 {"corrector", totals.corrector_count}};
  j["ns_per_dof_per_step"] = {
      {"stp", stp_ns_per_dof}, {"riemann", riemann_ns_per_dof}, {"corrector", corrector_ns_per_dof}};
  j["sweep_s"] = sweep_s;
  auto ranks_json = nlohmann::ordered_json::array();
  for (const RankReport& r : ranks)
    ranks_json.push_back({{"agent_idle_ns", r.scheduler.agent_idle_ns},
                          {"agent_tasks", r.scheduler.agent_tasks},
                          {"peak_consumers", r.scheduler.peak_consumers},
                          {"peak_queue", r.scheduler.peak_queue},
                          {"sends", r.sends},
                          {"receives", r.receives}});
  j["ranks"] = ranks_json;
  j["unconverged_predictors"] = unconverged_predictors;
  j["trace_dropped"] = trace_dropped;
  auto rows = nlohmann::ordered_json::array();
  for (const ScalingRow& s : scaling)
    rows.push_back({{"workers", s.workers}, {"ranks", s.ranks}, {"wall_s", s.wall_s}, {"speedup", s.speedup}});
  j["scaling"] = rows;
  out << j.dump(2) << '\n';
}

void TimingReport::write_json(const std::string& path) const {
  auto out = open_output(path);
  write_json(out);
}

SimulationResult run_simulation(const SolverConfig& config, const std::string& trace_path) {
  Discretization disc(config);
  InitialState state = build_initial_state(disc);
  World world(disc, std::move(state));
  const auto t0 = Clock::now();
  world.run(config.steps);
  SimulationResult r;
  r.report.mode = "enclave";
  r.report.wall_s = seconds_since(t0);
  r.solution = world.solution();
  r.mesh = world.mesh();
  fill_sizes(r.report, disc, r.mesh, config.steps);
  if (config.trace) {
    r.trace = world.tracer().snapshot();
    r.report.totals = aggregate_task_times(r.trace);
    r.report.trace_dropped = static_cast<std::int64_t>(world.tracer().dropped());
    if (!trace_path.empty()) world.tracer().write_csv(trace_path);
  }
  fill_costs(r.report);
  r.report.sweep_s = world.sweep_seconds();
  r.report.ranks = world.reports();
  r.report.unconverged_predictors = disc.unconverged_predictors();
  r.redundant_mismatches = world.redundant_mismatches();
  r.redundant_checks = world.redundant_checks();
  return r;
}

SimulationResult run_oracle(const SolverConfig& config) {
  Discretization disc(config);
  Oracle oracle(disc, build_initial_state(disc));
  const auto t0 = Clock::now();
  oracle.run(config.steps);
  SimulationResult r;
  r.report.mode = "oracle";
  r.report.wall_s = seconds_since(t0);
  r.solution = oracle.solution();
  r.mesh = oracle.mesh();
  fill_sizes(r.report, disc, r.mesh, config.steps);
  r.report.unconverged_predictors = disc.unconverged_predictors();
  return r;
}

SimulationResult run_baseline(const SolverConfig& config) {
  Discretization disc(config);
  InitialState state = build_initial_state(disc);
  Mesh mesh = state.mesh;
  BaselineResult b = parallel_for_baseline(disc, std::move(state), config.steps, config.scheduler.workers);
  SimulationResult r;
  r.report.mode = "pfor";
  r.report.wall_s = b.wall_s;
  r.solution = std::move(b.solution);
  r.mesh = std::move(mesh);
  fill_sizes(r.report, disc, r.mesh, config.steps);
  r.report.unconverged_predictors = disc.unconverged_predictors();
  return r;
}

std::vector<ScalingRow> run_scaling_suite(const SolverConfig& config, const std::vector<int>& workers,
                                          const std::vector<int>& ranks, int repetitions) {
  if (workers.empty()) throw ConfigError("scaling suite needs at least one worker count");
  if (repetitions < 1) throw ConfigError("scaling suite needs at least one repetition");
  const std::vector<int> rank_list = ranks.empty() ? std::vector<int>{config.ranks} : ranks;
  std::vector<ScalingRow> rows;
  for (int r : rank_list) {
    double reference = 0.0;
    for (std::size_t i = 0; i < workers.size(); ++i) {
      SolverConfig c = config;
      c.ranks = r;
      c.scheduler.workers = workers[i];
      c.trace = false;
      std::vector<double> walls;
      for (int rep = 0; rep < repetitions; ++rep) walls.push_back(run_simulation(c).report.wall_s);
      ScalingRow row{workers[i], r, median(walls), 1.0};
      if (i == 0)
        reference = row.wall_s;
      else
        row.speedup = row.wall_s > 0.0 ? reference / row.wall_s : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_scaling_csv(std::ostream& out, const std::vector<ScalingRow>& rows) {
  out << "workers,ranks,wall_s,speedup\n";
  char buf[128];
  for (const ScalingRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.6g\n", r.workers, r.ranks, r.wall_s, r.speedup);
    out << buf;
  }
}

void dump_solution(std::ostream& out, const Mesh& mesh, const Solution& solution,
                   const PolynomialBasis& basis, int components) {
  const int n = basis.size();
  out << "level,ix,iy,node_x,node_y,component,value\n";
  char buf[256];
  for (int node : mesh.cells()) {
    const CellKey& k = mesh.node(node).key;
    auto it = solution.find(k);
    if (it == solution.end())
      throw Error("dump: no data for cell (" + std::to_string(k.level) + "," + std::to_string(k.ix) + "," +
                  std::to_string(k.iy) + ")");
    const CellGeometry g = mesh.geometry(k.level);
    const auto o = mesh.origin(k);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (int v = 0; v < components; ++v) {
          std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%d,%.17g\n", k.level, k.ix, k.iy,
                        o[0] + g.hx * basis.nodes()[i], o[1] + g.hy * basis.nodes()[j], v,
                        it->second[(j * n + i) * components + v]);
          out << buf;
        }
  }
}

void dump_solution(const std::string& path, const Mesh& mesh, const Solution& solution,
                   const PolynomialBasis& basis, int components) {
  auto out = open_output(path);
  dump_solution(out, mesh, solution, basis, components);
  if (!out) throw Error("dump: write to '" + path + "' failed");
}

Solution load_dump(const std::string& path, int order, int components) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dump '" + path + "'");
  const std::size_t per_cell = static_cast<std::size_t>(order + 1) * (order + 1) * components;
  Solution s;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CellKey k;
    double x = 0, y = 0, value = 0;
    int comp = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf,%d,%lf", &k.level, &k.ix, &k.iy, &x, &y, &comp, &value) != 7)
      throw ConfigError("malformed dump row in '" + path + "': " + line);
    auto& q = s[k];
    if (q.size() >= per_cell) throw ConfigError("too many rows for one cell in '" + path + "'");
    q.push_back(value);
  }
  for (const auto& [k, q] : s)
    if (q.size() != per_cell) throw ConfigError("incomplete cell data in '" + path + "'");
  return s;
}

KernelCosts measure_kernel_costs(const SolverConfig& config, int repetitions) {
  Discretization disc(config);
  const Mesh mesh = Mesh::build_uniform(config.depth, config.box, config.periodic, config.max_depth);
  const CellKey key = mesh.node(mesh.cells().front()).key;
  std::vector<double> q = disc.initial_values(mesh, key);
  const CellGeometry geom = mesh.geometry(key.level);
  const KernelContext ctx{disc.basis(), disc.pde(), geom};
  const TimeStepRule rule(disc, mesh, Solution{{key, q}});
  const double dt = rule.next(mesh, Solution{{key, q}});
  Predictor pred;
  FvPatch patch;
  KernelCosts c;
  volatile double sink = 0.0;

  auto time_it = [&](auto&& body) {
    body();
    const auto t0 = Clock::now();
    for (int r = 0; r < repetitions; ++r) body();
    return std::chrono::duration<double, std::nano>(Clock::now() - t0).count() / repetitions;
  };
  c.stp_ns = time_it([&] {
    if (disc.pde().is_linear())
      stp_linear(ctx, q, dt, pred);
    else
      stp_picard(ctx, q, dt, config.picard_tol, disc.picard_max_iter(), pred);
  });
  std::vector<double> out(disc.trace_size());
  c.riemann_ns = time_it([&] {
    riemann_rusanov(pred.face(kPlusX), pred.face(kMinusX), disc.pde(), 0, 1, out);
    sink = sink + out[0];
  });
  std::array<std::span<const double>, 4> ff{pred.face(0), pred.face(1), pred.face(2), pred.face(3)};
  std::vector<double> work = q;
  c.corrector_ns = time_it([&] {
    work = q;
    corrector(ctx, work, pred, ff, dt);
  });
  c.fv_patch_ns = time_it([&] { sink = sink + fv_cell_kernel(ctx, q, dt, patch); });
  return c;
}

}  // namespace enclave
