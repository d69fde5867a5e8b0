// SPDX-License-Identifier: Apache-2.0
#include "enclave/solver.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <cstring>
#include <numbers>
#include <thread>
#include <unordered_map>

#include "enclave/error.hpp"

namespace enclave {

namespace {

std::string describe(const CellKey& k) {
  return "(" + std::to_string(k.level) + "," + std::to_string(k.ix) + "," + std::to_string(k.iy) + ")";
}

// Side index of the cell on side k of a face, as seen from that cell.
int facing_side(const Face& f, int k) { return f.axis() * 2 + (k == 0 ? 1 : 0); }

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Trace of coarse cell `c` interpolated onto the virtual side of child face `f`.
void virtual_trace(const Mesh& mesh, const Discretization& disc, const Face& f,
                   const Predictor& coarse, std::span<double> out) {
  const Face& parent = mesh.face(f.parent);
  int side = -1;
  for (int k = 0; k < 2; ++k)
    if (parent.sides[k].kind == SideKind::Cell) side = facing_side(parent, k);
  if (side < 0) throw Error("child face " + std::to_string(f.id) + " without coarse cell");
  disc.transfer().interpolate(coarse.face(side), disc.components(), f.delta, f.offset, out);
}

// Same error category, message prefixed with the failing rank.
std::exception_ptr tag_with_rank(std::exception_ptr e, int rank) {
  const std::string p = "rank " + std::to_string(rank) + ": ";
  try {
    std::rethrow_exception(e);
  } catch (const TraversalAbort&) {
    return e;
  } catch (const ConfigError& x) {
    return std::make_exception_ptr(ConfigError(p + x.what()));
  } catch (const CapacityError& x) {
    return std::make_exception_ptr(CapacityError(p + x.what()));
  } catch (const InvalidTargetError& x) {
    return std::make_exception_ptr(InvalidTargetError(p + x.what()));
  } catch (const NotCoarsenableError& x) {
    return std::make_exception_ptr(NotCoarsenableError(p + x.what()));
  } catch (const NotReadyError& x) {
    return std::make_exception_ptr(NotReadyError(p + x.what()));
  } catch (const NumericalError& x) {
    return std::make_exception_ptr(NumericalError(p + x.what()));
  } catch (const SchedulingError& x) {
    return std::make_exception_ptr(SchedulingError(p + x.what()));
  } catch (const std::exception& x) {
    return std::make_exception_ptr(Error(p + x.what()));
  } catch (...) {
    return std::make_exception_ptr(Error(p + "unknown failure"));
  }
}

int child_slot(const Mesh& mesh, const Face& f, int face_index) {
  const Face& parent = mesh.face(f.parent);
  auto it = std::find(parent.children.begin(), parent.children.end(), face_index);
  if (it == parent.children.end())
    throw Error("face " + std::to_string(f.id) + " missing from its parent");
  return static_cast<int>(it - parent.children.begin());
}

}  // namespace

KernelKind parse_kernel(const std::string& s) {
  if (s == "aderdg") return KernelKind::AderDg;
  if (s == "fv") return KernelKind::FiniteVolume;
  if (s == "synthetic") return KernelKind::Synthetic;
  throw ConfigError("unknown kernel '" + s + "' (aderdg, fv, synthetic)");
}

InitialCondition parse_ic(const std::string& s) {
  if (s == "const" || s == "constant") return InitialCondition::Constant;
  if (s == "sine") return InitialCondition::Sine;
  if (s == "step") return InitialCondition::Step;
  throw ConfigError("unknown initial condition '" + s + "' (const, sine, step)");
}

RankMode parse_rank_mode(const std::string& s) {
  if (s == "parallel") return RankMode::Parallel;
  if (s == "interleaved") return RankMode::Interleaved;
  throw ConfigError("unknown rank mode '" + s + "' (parallel, interleaved)");
}

RefinementCriterion SolverConfig::criterion() const {
  RefinementCriterion c;
  c.refine_tol = refine_tol;
  c.coarsen_tol = coarsen_tol;
  c.min_level = depth;
  c.max_level = max_level > 0 ? max_level : depth;
  return c;
}

void SolverConfig::validate() const {
  if (order < 1 || order > 7) throw ConfigError("order must be in [1, 7], got " + std::to_string(order));
  if (!(picard_tol > 0.0)) throw ConfigError("picard tolerance must be positive");
  if (picard_max_iter < 0) throw ConfigError("picard iteration limit must be >= 0");
  if (synthetic_cost < 0) throw ConfigError("synthetic cost must be >= 0");
  if (steps < 0) throw ConfigError("step count must be >= 0");
  if (ranks < 1) throw ConfigError("rank count must be >= 1");
  if (!(cfl > 0.0 && cfl <= 1.0)) throw ConfigError("cfl must be in (0, 1]");
  if (!(box.width > 0.0 && box.height > 0.0)) throw ConfigError("domain extent must be positive");
  scheduler.validate();
  auto pde_instance = make_pde(pde);
  if (fused && !pde_instance->is_linear())
    throw ConfigError("fused mode needs a constant time step; '" + pde + "' is nonlinear");
  if (amr) {
    const RefinementCriterion c = criterion();
    c.validate();
    if (c.max_level > max_depth)
      throw ConfigError("maximum refinement level " + std::to_string(c.max_level) +
                        " exceeds mesh depth limit " + std::to_string(max_depth));
  }
}

// --- discretization ----------------------------------------------------------

Discretization::Discretization(const SolverConfig& config)
    : config_(config), basis_(config.order), pde_(make_pde(config.pde)), transfer_(basis_) {
  config_.validate();
}

std::size_t Discretization::volume_size() const {
  return static_cast<std::size_t>(basis_.size()) * basis_.size() * pde_->components();
}

std::size_t Discretization::trace_size() const {
  return static_cast<std::size_t>(basis_.size()) * pde_->components();
}

int Discretization::picard_max_iter() const {
  return config_.picard_max_iter > 0 ? config_.picard_max_iter : 2 * (config_.order + 1);
}

void Discretization::predictor(const CellGeometry& geom, std::span<const double> q, double dt,
                               Predictor& out, FvPatch& scratch) const {
  const KernelContext ctx{basis_, *pde_, geom};
  if (config_.kernel == KernelKind::Synthetic) {
    synthetic_stp(ctx, q, config_.synthetic_cost, out);
    return;
  }
  if (pde_->is_linear()) {
    stp_linear(ctx, q, dt, out);
  } else {
    stp_picard(ctx, q, dt, config_.picard_tol, picard_max_iter(), out);
    if (!out.converged) unconverged_.fetch_add(1);
  }
  if (config_.kernel == KernelKind::FiniteVolume) out.checksum = fv_cell_kernel(ctx, q, dt, scratch);
}

std::vector<double> Discretization::initial_values(const Mesh& mesh, const CellKey& key) const {
  const int n = basis_.size();
  const int m = pde_->components();
  const CellGeometry g = mesh.geometry(key.level);
  const auto o = mesh.origin(key);
  const DomainBox& box = mesh.box();
  std::vector<double> q(volume_size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const double xr = (o[0] + g.hx * basis_.nodes()[i] - box.x0) / box.width;
      const double yr = (o[1] + g.hy * basis_.nodes()[j] - box.y0) / box.height;
      double value = config_.ic_value;
      switch (config_.ic) {
        case InitialCondition::Constant: break;
        case InitialCondition::Sine:
          value = 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * xr) * std::sin(2.0 * std::numbers::pi * yr);
          break;
        case InitialCondition::Step: {
          const double r2 = (xr - 0.5) * (xr - 0.5) + (yr - 0.5) * (yr - 0.5);
          value = r2 < 0.0625 ? 2.0 : 1.0;
          break;
        }
      }
      for (int v = 0; v < m; ++v) q[(j * n + i) * m + v] = value;
    }
  return q;
}

InitialState build_initial_state(const Discretization& disc) {
  const SolverConfig& cfg = disc.config();
  InitialState s;
  s.mesh = Mesh::build_uniform(cfg.depth, cfg.box, cfg.periodic, cfg.max_depth);
  if (!cfg.mesh_file.empty()) s.mesh.load_description(cfg.mesh_file);
  if (cfg.amr) {
    const RefinementCriterion crit = cfg.criterion();
    for (int pass = 0; pass < crit.max_level; ++pass) {
      std::vector<CellKey> refine;
      for (int n : s.mesh.cells()) {
        const CellKey& k = s.mesh.node(n).key;
        const auto q = disc.initial_values(s.mesh, k);
        if (evaluate_refinement_criterion(disc.basis(), disc.components(), q, k.level, crit) ==
            Verdict::Refine)
          refine.push_back(k);
      }
      if (refine.empty()) break;
      s.mesh.update({}, refine);
    }
  }
  for (int n : s.mesh.cells()) {
    const CellKey& k = s.mesh.node(n).key;
    s.solution[k] = disc.initial_values(s.mesh, k);
  }
  return s;
}

// --- time step ---------------------------------------------------------------

TimeStepRule::TimeStepRule(const Discretization& disc, const Mesh& mesh, const Solution& initial)
    : disc_(disc), constant_(disc.pde().is_linear()) {
  if (!constant_) return;
  const SolverConfig& cfg = disc.config();
  int level = mesh.finest_level();
  if (cfg.amr) level = std::max(level, cfg.criterion().max_level);
  const CellGeometry g = mesh.geometry(level);
  double lambda = 0.0;
  for (const auto& [key, q] : initial) lambda = std::max(lambda, cell_wave_speed(disc.pde(), q));
  const double h = std::min(g.hx, g.hy);
  dt_ = admissible_dt(std::span<const double>(&h, 1), std::span<const double>(&lambda, 1),
                      cfg.order, cfg.cfl);
}

double TimeStepRule::from_samples(std::span<const double> h, std::span<const double> lambda) const {
  if (constant_) return dt_;
  return admissible_dt(h, lambda, disc_.config().order, disc_.config().cfl);
}

double TimeStepRule::next(const Mesh& mesh, const Solution& solution) const {
  if (constant_) return dt_;
  std::vector<double> h, lambda;
  for (const auto& [key, q] : solution) {
    const CellGeometry g = mesh.geometry(key.level);
    h.push_back(std::min(g.hx, g.hy));
    lambda.push_back(cell_wave_speed(disc_.pde(), q));
  }
  return from_samples(h, lambda);
}

void check_finite(std::span<const double> q, const CellKey& key, int step) {
  for (double v : q)
    if (!std::isfinite(v))
      throw NumericalError("non-finite solution in cell " + describe(key) + " at step " +
                           std::to_string(step));
}

// --- oracle ------------------------------------------------------------------

Oracle::Oracle(const Discretization& disc, InitialState state)
    : disc_(disc),
      mesh_(std::move(state.mesh)),
      solution_(std::move(state.solution)),
      rule_(disc, mesh_, solution_) {
  dt_ = rule_.next(mesh_, solution_);
}

void Oracle::run(int steps) {
  for (int s = 0; s < steps; ++s) step();
}

void Oracle::step() {
  const int m = disc_.components();
  const std::size_t len = disc_.trace_size();
  const SolverConfig& cfg = disc_.config();

  std::map<CellKey, Predictor> pred;
  FvPatch scratch;
  for (int n : mesh_.cells()) {
    const CellKey& k = mesh_.node(n).key;
    disc_.predictor(mesh_.geometry(k.level), solution_.at(k), dt_, pred[k], scratch);
  }

  const auto& faces = mesh_.faces();
  std::vector<std::vector<double>> outcome(faces.size());
  std::vector<RestrictionAccumulator> acc(faces.size());
  auto trace = [&](const Face& f, int k, std::vector<double>& buf) -> std::span<const double> {
    const FaceSide& s = f.sides[k];
    if (s.kind == SideKind::Cell) return pred.at(s.key).face(facing_side(f, k));
    buf.resize(len);
    virtual_trace(mesh_, disc_, f, pred.at(s.owner), buf);
    return buf;
  };
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Face& f = faces[fi];
    if (f.kind == FaceKind::Parent) continue;
    outcome[fi].resize(len);
    if (f.kind == FaceKind::Boundary) {
      const int k = f.sides[0].kind == SideKind::Domain ? 1 : 0;
      std::vector<double> buf;
      const auto tr = trace(f, k, buf);
      riemann_rusanov(tr, tr, disc_.pde(), f.axis(), 1, outcome[fi]);
      continue;
    }
    std::vector<double> b0, b1;
    riemann_rusanov(trace(f, 0, b0), trace(f, 1, b1), disc_.pde(), f.axis(), 1, outcome[fi]);
    if (f.kind == FaceKind::Child) {
      std::vector<double> r(len);
      disc_.transfer().restrict_trace(outcome[fi], m, f.delta, f.offset, r);
      const Face& parent = faces[f.parent];
      acc[f.parent].deposit(child_slot(mesh_, f, static_cast<int>(fi)),
                            static_cast<int>(parent.children.size()), r, step_);
    }
  }
  for (std::size_t fi = 0; fi < faces.size(); ++fi)
    if (faces[fi].kind == FaceKind::Parent) {
      outcome[fi].resize(len);
      acc[fi].finalize(outcome[fi]);
    }

  std::map<CellKey, Verdict> verdicts;
  const RefinementCriterion crit = cfg.criterion();
  for (int n : mesh_.cells()) {
    const Node& node = mesh_.node(n);
    std::array<std::span<const double>, 4> ff;
    for (int s = 0; s < 4; ++s) ff[s] = outcome[node.side_faces[s]];
    auto& q = solution_.at(node.key);
    const KernelContext ctx{disc_.basis(), disc_.pde(), mesh_.geometry(node.key.level)};
    corrector(ctx, q, pred.at(node.key), ff, dt_);
    check_finite(q, node.key, step_);
    if (cfg.amr)
      verdicts[node.key] = evaluate_refinement_criterion(disc_.basis(), m, q, node.key.level, crit);
  }

  const double next_dt = rule_.next(mesh_, solution_);
  if (cfg.amr) {
    const UpdatePlan plan = plan_mesh_updates(mesh_, verdicts);
    if (!plan.empty()) {
      CellDataAccess access{
          [&](const CellKey& k) {
            auto node = solution_.extract(k);
            if (node.empty()) throw Error("oracle: no data for cell " + describe(k));
            return std::move(node.mapped());
          },
          [&](const CellKey& k, std::vector<double> q) { solution_[k] = std::move(q); }};
      apply_mesh_updates(mesh_, plan, disc_.transfer(), m, access);
    }
  }
  dt_ = next_dt;
  ++step_;
}

// --- enclave world -----------------------------------------------------------

namespace {

struct CellState {
  CellKey key;
  std::vector<double> q;
  Predictor pred;
  StpMarker marker;
  FvPatch scratch;
  Verdict verdict = Verdict::Keep;
  TaskClass spawned_as = TaskClass::Enclave;
  bool fresh = true;
};

struct FaceState {
  std::vector<double> remote;
  int remote_sweep = -1;
  std::vector<double> virt;
  int virt_sweep = -1;
  std::vector<double> outcome;
  int outcome_sweep = -1;
  RestrictionAccumulator acc;
};

}  // namespace

class RankDriver {
 public:
  RankDriver(World& world, int rank, const Mesh& mesh)
      : mesh(mesh),
        sched(world.disc().config().scheduler, &world.tracer(), rank),
        world_(world),
        disc_(world.disc()),
        rank_(rank),
        endpoint_(world.network(), rank, &world.tracer()) {
    const SolverConfig& cfg = disc_.config();
    hold_ = cfg.scheduler.variant == SchedulerVariant::PriorityConsumers && cfg.ranks > 1;
    hooks_.probe = [this] { return accept_one(); };
    hooks_.idle = [this] { world_.idle(); };
    expected_.resize(cfg.ranks);
    expected_pos_.assign(cfg.ranks, 0);
  }

  ~RankDriver() { sched.shutdown(); }

  void add_cell(const CellKey& key, std::vector<double> q) {
    auto c = std::make_unique<CellState>();
    c->key = key;
    c->q = std::move(q);
    cells[key] = std::move(c);
  }

  void spawn_pending(int gen, double dt) {
    dt_ = dt;
    if (hold_) sched.set_hold(true);
    for (int n : mesh.cells()) {
      const CellKey& k = mesh.node(n).key;
      if (mesh.owner(k) != rank_) continue;
      CellState& c = cell(k);
      if (c.fresh || c.marker.state() == StpMarker::Idle) spawn(c, n, gen, dt);
    }
  }

  void secondary(int gen) {
    expected_sweep_ = gen;
    for (int b = 0; b < mesh.rank_count(); ++b) {
      expected_[b] = b == rank_ ? std::vector<int>{} : boundary_face_order(mesh, rank_, b);
      expected_pos_[b] = 0;
    }
    const std::size_t len = disc_.trace_size();
    TraversalVisitor v;
    v.on_cell = [&](int n) {
      const Node& node = mesh.node(n);
      if (node.kind != NodeKind::Virtual) {
        wait_cell(cell(node.key));
        return;
      }
      for (int fi : node.side_faces) {
        if (fi < 0) continue;
        const Face& f = mesh.face(fi);
        if (f.kind != FaceKind::Child) continue;
        for (const FaceSide& s : f.sides) {
          if (s.kind != SideKind::Virtual || s.node != n) continue;
          FaceState& fs = faces[f.id];
          fs.virt.resize(len);
          const CellState& coarse = cell(s.owner);
          if (!coarse.marker.complete())
            throw NotReadyError("virtual trace requested before the predictor of cell " +
                                describe(s.owner) + " completed");
          virtual_trace(mesh, disc_, f, coarse.pred, fs.virt);
          fs.virt_sweep = gen;
        }
      }
    };
    v.on_face = [&](int fi) {
      const Face& f = mesh.face(fi);
      const int k = mesh.side_rank(f.sides[0]) == rank_ ? 0 : 1;
      const FaceSide& s = f.sides[k];
      const int to = mesh.side_rank(f.sides[1 - k]);
      if (s.kind == SideKind::Cell) {
        endpoint_.send_face(to, f.id, gen, cell(s.key).pred.face(facing_side(f, k)));
      } else {
        const FaceState& fs = faces[f.id];
        if (fs.virt_sweep != gen)
          throw SchedulingError("virtual trace of face " + std::to_string(f.id) + " missing in sweep " +
                                std::to_string(gen));
        endpoint_.send_face(to, f.id, gen, fs.virt);
      }
      ++sends_;
    };
    secondary_traversal(mesh, v, rank_);
    if (hold_) sched.set_hold(false);
  }

  void primary(int g, bool spawn_next, double dt_next) {
    Tracer& tr = world_.tracer();
    tr.record(TraceEvent::SweepBegin, rank_, g);
    const SolverConfig& cfg = disc_.config();
    const std::size_t len = disc_.trace_size();
    const int m = disc_.components();
    const RefinementCriterion crit = cfg.criterion();
    if (spawn_next && hold_) sched.set_hold(true);
    const double dt = dt_;

    TraversalVisitor v;
    v.on_face = [&](int fi) {
      const Face& f = mesh.face(fi);
      FaceState& fs = faces[f.id];
      fs.outcome.resize(len);
      if (f.kind == FaceKind::Parent) {
        if (fs.acc.sweep() != g)
          throw SchedulingError("parent face " + std::to_string(f.id) + " has no restricted data for sweep " +
                                std::to_string(g));
        fs.acc.finalize(fs.outcome);
        fs.outcome_sweep = g;
        return;
      }
      std::array<std::span<const double>, 2> in;
      std::array<std::int64_t, 2> inputs{-1, -1};
      if (f.kind == FaceKind::Boundary) {
        const int k = f.sides[0].kind == SideKind::Domain ? 1 : 0;
        in[0] = in[1] = obtain(f, k, g, fs, inputs[0]);
      } else {
        for (int k = 0; k < 2; ++k) in[k] = obtain(f, k, g, fs, inputs[k]);
      }
      tr.record(TraceEvent::RiemannBegin, f.id, g);
      for (std::int64_t c : inputs)
        if (c >= 0) tr.record(TraceEvent::RiemannInput, c, g);
      riemann_rusanov(in[0], in[1], disc_.pde(), f.axis(), 1, fs.outcome);
      tr.record(TraceEvent::RiemannEnd, f.id, g);
      fs.outcome_sweep = g;
      if (mesh.is_rank_boundary(f)) boundary_outcomes[f.id] = fs.outcome;
      if (f.kind == FaceKind::Child) {
        for (const FaceSide& s : f.sides) {
          if (s.kind != SideKind::Virtual || mesh.side_rank(s) != rank_) continue;
          std::vector<double> r(len);
          disc_.transfer().restrict_trace(fs.outcome, m, f.delta, f.offset, r);
          const Face& parent = mesh.face(f.parent);
          faces[parent.id].acc.deposit(child_slot(mesh, f, fi), static_cast<int>(parent.children.size()),
                                       r, g);
        }
      }
    };
    v.on_cell = [&](int n) {
      const Node& node = mesh.node(n);
      if (node.kind == NodeKind::Virtual) return;
      CellState& c = cell(node.key);
      wait_cell(c);
      std::array<std::span<const double>, 4> ff;
      for (int s = 0; s < 4; ++s) {
        const FaceState& fs = faces[mesh.face(node.side_faces[s]).id];
        if (fs.outcome_sweep != g)
          throw SchedulingError("corrector of cell " + describe(node.key) + " before its face outcome");
        ff[s] = fs.outcome;
      }
      const std::int64_t id = static_cast<std::int64_t>(node.key.packed());
      tr.record(TraceEvent::CorrectorBegin, id, g);
      const KernelContext ctx{disc_.basis(), disc_.pde(), mesh.geometry(node.key.level)};
      corrector(ctx, c.q, c.pred, ff, dt);
      tr.record(TraceEvent::CorrectorEnd, id, g);
      check_finite(c.q, node.key, g);
      c.verdict = cfg.amr ? evaluate_refinement_criterion(disc_.basis(), m, c.q, node.key.level, crit)
                          : Verdict::Keep;
      c.marker.reset();
      if (spawn_next && c.verdict == Verdict::Keep) spawn(c, n, g + 1, dt_next);
    };
    primary_traversal(mesh, v, rank_);
    tr.record(TraceEvent::SweepEnd, rank_, g);
  }

  void drain() { sched.drain(hooks_); }

  RankReport report() const { return {sched.stats(), sends_, receives_}; }

  void prune_faces() {
    for (auto it = faces.begin(); it != faces.end();)
      it = mesh.face_index(it->first) < 0 ? faces.erase(it) : std::next(it);
  }

  CellState& cell(const CellKey& k) {
    auto it = cells.find(k);
    if (it == cells.end())
      throw Error("rank " + std::to_string(rank_) + " holds no data for cell " + describe(k));
    return *it->second;
  }

  Mesh mesh;
  std::map<CellKey, std::unique_ptr<CellState>> cells;
  std::unordered_map<int, FaceState> faces;
  std::map<int, std::vector<double>> boundary_outcomes;
  Scheduler sched;

 private:
  void spawn(CellState& c, int node, int gen, double dt) {
    if (c.marker.state() == StpMarker::Complete) c.marker.reset();
    c.fresh = false;
    c.spawned_as = classify_cell(mesh, node) == CellClass::Skeleton ? TaskClass::Skeleton : TaskClass::Enclave;
    const CellGeometry geom = mesh.geometry(c.key.level);
    const Discretization* disc = &disc_;
    CellState* cs = &c;
    sched.spawn(make_task(static_cast<std::int64_t>(c.key.packed()), c.spawned_as, gen,
                          [disc, cs, geom, dt] { disc->predictor(geom, cs->q, dt, cs->pred, cs->scratch); }),
                c.marker);
  }

  void wait_cell(CellState& c) { sched.wait_for(c.marker, hooks_, c.spawned_as == TaskClass::Enclave); }

  std::span<const double> obtain(const Face& f, int k, int g, FaceState& fs, std::int64_t& input) {
    const FaceSide& s = f.sides[k];
    const int r = mesh.side_rank(s);
    if (r == rank_) {
      if (s.kind == SideKind::Cell) {
        CellState& c = cell(s.key);
        wait_cell(c);
        input = static_cast<std::int64_t>(s.key.packed());
        return c.pred.face(facing_side(f, k));
      }
      if (fs.virt_sweep != g)
        throw SchedulingError("virtual trace of face " + std::to_string(f.id) + " missing in sweep " +
                              std::to_string(g));
      return fs.virt;
    }
    receive_until(f.id, r, g, fs);
    return fs.remote;
  }

  void receive_until(int face_id, int from, int g, FaceState& fs) {
    if (fs.remote_sweep == g) return;
    Tracer& tr = world_.tracer();
    tr.record(TraceEvent::ReceiveWaitBegin, face_id, g);
    const auto timeout = disc_.config().scheduler.deadlock_timeout;
    auto last = std::chrono::steady_clock::now();
    while (fs.remote_sweep != g) {
      if (auto msg = endpoint_.receive(from)) {
        accept(std::move(*msg));
        last = std::chrono::steady_clock::now();
        continue;
      }
      const bool progress = accept_one() || sched.process_up_to(sched.config().n_max, false) > 0;
      const auto now = std::chrono::steady_clock::now();
      if (progress) {
        last = now;
        continue;
      }
      if (now - last > timeout)
        throw SchedulingError("deadlock: rank " + std::to_string(rank_) + " waits for face " +
                              std::to_string(face_id) + " from rank " + std::to_string(from));
      world_.idle();
    }
    tr.record(TraceEvent::ReceiveWaitEnd, face_id, g);
  }

  bool accept_one() {
    const auto from = endpoint_.probe();
    if (!from) return false;
    auto msg = endpoint_.receive(*from);
    if (!msg) return false;
    accept(std::move(*msg));
    return true;
  }

  void accept(FaceMessage msg) {
    if (msg.sweep != expected_sweep_)
      throw SchedulingError("rank " + std::to_string(rank_) + " received face " + std::to_string(msg.face_id) +
                            " of sweep " + std::to_string(msg.sweep) + " while expecting sweep " +
                            std::to_string(expected_sweep_));
    const auto& order = expected_[msg.from];
    std::size_t& pos = expected_pos_[msg.from];
    if (pos >= order.size() || mesh.face(order[pos]).id != msg.face_id)
      throw SchedulingError("rank " + std::to_string(rank_) + " received face " + std::to_string(msg.face_id) +
                            " from rank " + std::to_string(msg.from) + " out of boundary order");
    ++pos;
    FaceState& fs = faces[msg.face_id];
    fs.remote = std::move(msg.payload);
    fs.remote_sweep = msg.sweep;
    ++receives_;
  }

  World& world_;
  const Discretization& disc_;
  int rank_;
  RankEndpoint endpoint_;
  WaitHooks hooks_;
  bool hold_ = false;
  double dt_ = 0.0;
  int expected_sweep_ = -1;
  std::vector<std::vector<int>> expected_;
  std::vector<std::size_t> expected_pos_;
  std::int64_t sends_ = 0;
  std::int64_t receives_ = 0;
};

World::World(const Discretization& disc, InitialState state)
    : disc_(disc),
      tracer_(disc.config().trace),
      network_(disc.config().ranks, disc.config().latency, disc.config().seed) {
  const SolverConfig& cfg = disc.config();
  apply_decomposition(state.mesh, decompose(state.mesh, cfg.ranks));
  rule_ = std::make_unique<TimeStepRule>(disc, state.mesh, state.solution);
  dt_ = rule_->next(state.mesh, state.solution);
  for (int r = 0; r < cfg.ranks; ++r) ranks_.push_back(std::make_unique<RankDriver>(*this, r, state.mesh));
  for (auto& [key, q] : state.solution) ranks_[state.mesh.owner(key)]->add_cell(key, std::move(q));
}

World::~World() = default;

const Mesh& World::mesh() const { return ranks_.front()->mesh; }

Solution World::solution() const {
  Solution s;
  for (const auto& r : ranks_)
    for (const auto& [key, c] : r->cells) s[key] = c->q;
  return s;
}

std::vector<RankReport> World::reports() const {
  std::vector<RankReport> out;
  for (const auto& r : ranks_) out.push_back(r->report());
  return out;
}

void World::check_abort() const {
  if (aborted_.load()) throw TraversalAbort("world aborted by a failure on another rank");
}

void World::idle() {
  check_abort();
  if (interleaved()) {
    baton_.unlock();
    std::this_thread::yield();
    baton_.lock();
  } else {
    std::this_thread::yield();
  }
}

void World::sync(const std::function<void()>& leader) {
  std::unique_lock lock(sync_mutex_);
  if (interleaved()) baton_.unlock();
  const std::uint64_t gen = generation_;
  if (++arrived_ == ranks()) {
    arrived_ = 0;
    try {
      leader();
    } catch (...) {
      if (!first_error_) first_error_ = std::current_exception();
      aborted_.store(true);
    }
    ++generation_;
    sync_cv_.notify_all();
  } else {
    sync_cv_.wait(lock, [&] { return generation_ != gen || aborted_.load(); });
  }
  lock.unlock();
  if (interleaved()) baton_.lock();
  check_abort();
}

void World::after_primary(int /*step*/) {
  std::map<int, const std::vector<double>*> seen;
  for (auto& r : ranks_) {
    for (const auto& [id, out] : r->boundary_outcomes) {
      auto [it, fresh] = seen.emplace(id, &out);
      if (fresh) continue;
      ++redundant_checks_;
      if (!bitwise_equal(*it->second, out)) ++mismatches_;
    }
  }
  for (auto& r : ranks_) r->boundary_outcomes.clear();

  plan_ = {};
  if (disc_.config().amr) {
    std::map<CellKey, Verdict> verdicts;
    for (auto& r : ranks_)
      for (const auto& [key, c] : r->cells) verdicts[key] = c->verdict;
    plan_ = plan_mesh_updates(ranks_.front()->mesh, verdicts);
    skipped_ += static_cast<std::int64_t>(plan_.skipped.size());
  }
  if (!rule_->constant()) {
    std::vector<double> h, lambda;
    for (auto& r : ranks_)
      for (const auto& [key, c] : r->cells) {
        const CellGeometry g = r->mesh.geometry(key.level);
        h.push_back(std::min(g.hx, g.hy));
        lambda.push_back(cell_wave_speed(disc_.pde(), c->q));
      }
    dt_ = rule_->from_samples(h, lambda);
  }
  const std::int64_t now = tracer_.now_ns();
  sweep_seconds_.push_back(static_cast<double>(now - sweep_start_ns_) * 1e-9);
  sweep_start_ns_ = now;
}

void World::apply_updates() {
  Mesh& lead = ranks_.front()->mesh;
  CellDataAccess access{
      [&](const CellKey& k) {
        for (auto& r : ranks_) {
          auto it = r->cells.find(k);
          if (it == r->cells.end()) continue;
          std::vector<double> q = std::move(it->second->q);
          r->cells.erase(it);
          return q;
        }
        throw Error("no rank holds data for cell " + describe(k));
      },
      [&](const CellKey& k, std::vector<double> q) { ranks_[lead.owner(k)]->add_cell(k, std::move(q)); }};
  apply_mesh_updates(lead, plan_, disc_.transfer(), disc_.components(), access);
  for (std::size_t r = 1; r < ranks_.size(); ++r) ranks_[r]->mesh.update(plan_.coarsen, plan_.refine);
  for (auto& r : ranks_) r->prune_faces();
}

void World::rank_main(int rank, int first, int steps) {
  set_current_worker(rank * 1000);
  if (interleaved()) baton_.lock();
  try {
    RankDriver& d = *ranks_[rank];
    const bool fused = disc_.config().fused;
    if (steps > 0) {
      d.spawn_pending(first, dt_);
      d.secondary(first);
    }
    for (int g = first; g < first + steps; ++g) {
      const bool last = g == first + steps - 1;
      d.primary(g, fused && !last, dt_);
      sync([&] { after_primary(g); });
      if (!plan_.empty()) {
        d.drain();
        sync([&] { apply_updates(); });
      }
      if (!last) {
        d.spawn_pending(g + 1, dt_);
        d.secondary(g + 1);
      }
    }
    d.drain();
  } catch (...) {
    {
      std::lock_guard lock(sync_mutex_);
      if (!first_error_) first_error_ = tag_with_rank(std::current_exception(), rank);
      aborted_.store(true);
    }
    sync_cv_.notify_all();
  }
  if (interleaved()) baton_.unlock();
}

void World::run(int steps) {
  if (steps < 0) throw ConfigError("step count must be >= 0");
  const int first = step_;
  sweep_start_ns_ = tracer_.now_ns();
  {
    std::vector<std::jthread> threads;
    for (int r = 0; r < ranks(); ++r) threads.emplace_back([this, r, first, steps] { rank_main(r, first, steps); });
  }
  if (first_error_) std::rethrow_exception(first_error_);
  step_ += steps;
}

// --- parallel-for baseline ---------------------------------------------------

BaselineResult parallel_for_baseline(const Discretization& disc, InitialState state, int steps,
                                     int workers) {
  const SolverConfig& cfg = disc.config();
  if (cfg.amr) throw ConfigError("parallel-for baseline does not support adaptive refinement");
  Mesh& mesh = state.mesh;
  if (mesh.finest_level() != mesh.base_depth())
    throw ConfigError("parallel-for baseline needs a regular mesh");
  if (workers < 1) throw ConfigError("worker count must be >= 1");

  const std::size_t len = disc.trace_size();
  const auto& cell_nodes = mesh.cells();
  const std::size_t nc = cell_nodes.size();
  const std::size_t nf = mesh.faces().size();
  std::vector<std::vector<double>> q(nc);
  for (std::size_t c = 0; c < nc; ++c) q[c] = state.solution.at(mesh.node(cell_nodes[c]).key);
  std::vector<Predictor> pred(nc);
  std::vector<FvPatch> scratch(nc);
  std::vector<std::vector<double>> outcome(nf, std::vector<double>(len));
  auto index_of = [&](const CellKey& k) { return static_cast<std::size_t>(mesh.sfc_position(k)); };

  TimeStepRule rule(disc, mesh, state.solution);
  double dt = rule.next(mesh, state.solution);
  const CellGeometry geom = mesh.geometry(mesh.base_depth());

  std::barrier sync(workers);
  std::mutex error_mutex;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto guarded = [&](auto&& body) {
    if (failed.load()) return;
    try {
      body();
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      failed.store(true);
    }
  };

  const auto start = std::chrono::steady_clock::now();
  auto worker = [&](int t) {
    set_current_worker(t);
    for (int g = 0; g < steps; ++g) {
      guarded([&] {
        for (std::size_t c = t; c < nc; c += workers) disc.predictor(geom, q[c], dt, pred[c], scratch[c]);
      });
      sync.arrive_and_wait();
      guarded([&] {
        for (std::size_t fi = t; fi < nf; fi += workers) {
          const Face& f = mesh.face(static_cast<int>(fi));
          if (f.kind == FaceKind::Boundary) {
            const int k = f.sides[0].kind == SideKind::Domain ? 1 : 0;
            const auto tr = pred[index_of(f.sides[k].key)].face(facing_side(f, k));
            riemann_rusanov(tr, tr, disc.pde(), f.axis(), 1, outcome[fi]);
          } else {
            riemann_rusanov(pred[index_of(f.sides[0].key)].face(facing_side(f, 0)),
                            pred[index_of(f.sides[1].key)].face(facing_side(f, 1)), disc.pde(), f.axis(), 1,
                            outcome[fi]);
          }
        }
      });
      sync.arrive_and_wait();
      guarded([&] {
        for (std::size_t c = t; c < nc; c += workers) {
          const Node& node = mesh.node(cell_nodes[c]);
          std::array<std::span<const double>, 4> ff;
          for (int s = 0; s < 4; ++s) ff[s] = outcome[node.side_faces[s]];
          const KernelContext ctx{disc.basis(), disc.pde(), geom};
          corrector(ctx, q[c], pred[c], ff, dt);
          check_finite(q[c], node.key, g);
        }
      });
      sync.arrive_and_wait();
      if (t == 0 && !rule.constant())
        guarded([&] {
          std::vector<double> h(nc, std::min(geom.hx, geom.hy)), lambda(nc);
          for (std::size_t c = 0; c < nc; ++c) lambda[c] = cell_wave_speed(disc.pde(), q[c]);
          dt = rule.from_samples(h, lambda);
        });
      sync.arrive_and_wait();
    }
  };
  {
    std::vector<std::jthread> threads;
    for (int t = 1; t < workers; ++t) threads.emplace_back(worker, t);
    worker(0);
  }
  BaselineResult result;
  result.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (error) std::rethrow_exception(error);
  for (std::size_t c = 0; c < nc; ++c) result.solution[mesh.node(cell_nodes[c]).key] = std::move(q[c]);
  return result;
}

}  // namespace enclave
