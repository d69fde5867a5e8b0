// SPDX-License-Identifier: Apache-2.0
#include "enclave/amr.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "enclave/error.hpp"

namespace enclave {

std::vector<double> TransferOperators::interp_matrix(int depth, int offset) const {
  if (depth < 1 || offset < 0 || offset >= ipow3(depth))
    throw InvalidTargetError("transfer: invalid child position");
  return basis_.subinterval_interp(depth, offset);
}

std::vector<double> TransferOperators::restrict_matrix(int depth, int offset) const {
  const int n = basis_.size();
  const auto p = interp_matrix(depth, offset);
  const auto& w = basis_.weights();
  const double scale = 1.0 / ipow3(depth);
  std::vector<double> r(n * n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) r[j * n + k] = scale * w[k] * p[k * n + j] / w[j];
  return r;
}

namespace {

void apply_matrix(const std::vector<double>& a, int n, int m, std::span<const double> in,
                  std::span<double> out) {
  for (int r = 0; r < n; ++r)
    for (int v = 0; v < m; ++v) {
      double s = 0.0;
      for (int c = 0; c < n; ++c) s += a[r * n + c] * in[c * m + v];
      out[r * m + v] = s;
    }
}

}  // namespace

void TransferOperators::interpolate(std::span<const double> parent, int m, int depth, int offset,
                                    std::span<double> child) const {
  apply_matrix(interp_matrix(depth, offset), basis_.size(), m, parent, child);
}

void TransferOperators::restrict_trace(std::span<const double> child, int m, int depth, int offset,
                                       std::span<double> out) const {
  apply_matrix(restrict_matrix(depth, offset), basis_.size(), m, child, out);
}

std::array<std::vector<double>, 9> TransferOperators::refine_volume(std::span<const double> parent,
                                                                    int m) const {
  const int n = basis_.size();
  std::array<std::vector<double>, 3> p;
  for (int o = 0; o < 3; ++o) p[o] = interp_matrix(1, o);
  std::array<std::vector<double>, 9> out;
  std::vector<double> tmp(n * n * m);
  for (int c = 0; c < 9; ++c) {
    const auto& px = p[c % 3];
    const auto& py = p[c / 3];
    // contract y first: tmp(a, j) = sum_b py[j][b] q(a, b)
    for (int j = 0; j < n; ++j)
      for (int a = 0; a < n; ++a)
        for (int v = 0; v < m; ++v) {
          double s = 0.0;
          for (int b = 0; b < n; ++b) s += py[j * n + b] * parent[(b * n + a) * m + v];
          tmp[(j * n + a) * m + v] = s;
        }
    out[c].assign(n * n * m, 0.0);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (int v = 0; v < m; ++v) {
          double s = 0.0;
          for (int a = 0; a < n; ++a) s += px[i * n + a] * tmp[(j * n + a) * m + v];
          out[c][(j * n + i) * m + v] = s;
        }
  }
  return out;
}

std::vector<double> TransferOperators::coarsen_volume(
    const std::array<std::vector<double>, 9>& children, int m) const {
  const int n = basis_.size();
  std::array<std::vector<double>, 3> r;
  for (int o = 0; o < 3; ++o) r[o] = restrict_matrix(1, o);
  std::vector<double> parent(n * n * m, 0.0);
  std::vector<double> tmp(n * n * m);
  for (int c = 0; c < 9; ++c) {
    const auto& rx = r[c % 3];
    const auto& ry = r[c / 3];
    const auto& q = children[c];
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < n; ++i)
        for (int v = 0; v < m; ++v) {
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += ry[b * n + j] * q[(j * n + i) * m + v];
          tmp[(b * n + i) * m + v] = s;
        }
    for (int b = 0; b < n; ++b)
      for (int a = 0; a < n; ++a)
        for (int v = 0; v < m; ++v) {
          double s = 0.0;
          for (int i = 0; i < n; ++i) s += rx[a * n + i] * tmp[(b * n + i) * m + v];
          parent[(b * n + a) * m + v] += s;
        }
  }
  return parent;
}

void RestrictionAccumulator::reset(int children, std::size_t len, int sweep) {
  sweep_ = sweep;
  len_ = len;
  slots_.assign(children * len, 0.0);
  filled_.assign(children, 0);
}

void RestrictionAccumulator::deposit(int child, int children, std::span<const double> value,
                                     int sweep) {
  if (sweep < sweep_) throw SchedulingError("restriction: deposit from a past sweep");
  if (sweep > sweep_) reset(children, value.size(), sweep);
  if (child < 0 || child >= static_cast<int>(filled_.size()))
    throw SchedulingError("restriction: child index out of range");
  if (filled_[child])
    throw SchedulingError("restriction: child " + std::to_string(child) +
                          " restricted twice in sweep " + std::to_string(sweep));
  std::copy(value.begin(), value.end(), slots_.begin() + child * len_);
  filled_[child] = 1;
}

bool RestrictionAccumulator::complete() const {
  return !filled_.empty() && std::all_of(filled_.begin(), filled_.end(), [](char f) { return f; });
}

void RestrictionAccumulator::finalize(std::span<double> out) const {
  if (!complete()) throw SchedulingError("restriction: parent face read before all children");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < filled_.size(); ++c)
    for (std::size_t k = 0; k < len_; ++k) out[k] += slots_[c * len_ + k];
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Keep: return "keep";
    case Verdict::Refine: return "refine";
    case Verdict::Coarsen: return "coarsen";
  }
  return "?";
}

void RefinementCriterion::validate() const {
  if (!(coarsen_tol >= 0.0) || !(refine_tol > coarsen_tol))
    throw ConfigError("refinement criterion needs refine_tol > coarsen_tol >= 0");
  if (min_level < 1 || max_level < min_level)
    throw ConfigError("refinement criterion needs 1 <= min level <= max level");
}

double gradient_indicator(const PolynomialBasis& basis, int m, std::span<const double> q) {
  const int n = basis.size();
  double ind = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      for (int v = 0; v < m; ++v) {
        double gx = 0.0, gy = 0.0;
        for (int k = 0; k < n; ++k) {
          gx += basis.diff(i, k) * q[(j * n + k) * m + v];
          gy += basis.diff(j, k) * q[(k * n + i) * m + v];
        }
        ind = std::max(ind, std::sqrt(gx * gx + gy * gy));
      }
  return ind;
}

Verdict evaluate_refinement_criterion(const PolynomialBasis& basis, int m,
                                      std::span<const double> q, int level,
                                      const RefinementCriterion& c) {
  const double ind = gradient_indicator(basis, m, q);
  if (ind > c.refine_tol && level < c.max_level) return Verdict::Refine;
  if (ind < c.coarsen_tol && level > c.min_level) return Verdict::Coarsen;
  return Verdict::Keep;
}

UpdatePlan plan_mesh_updates(const Mesh& mesh, const std::map<CellKey, Verdict>& verdicts) {
  UpdatePlan plan;
  auto verdict = [&](const CellKey& k) {
    auto it = verdicts.find(k);
    return it == verdicts.end() ? Verdict::Keep : it->second;
  };
  std::set<CellKey> parents;
  for (int c : mesh.cells()) {
    const CellKey k = mesh.node(c).key;
    const Verdict v = verdict(k);
    if (v == Verdict::Refine) plan.refine.push_back(k);
    if (v == Verdict::Coarsen && k.level > 0) parents.insert(k.parent());
  }
  for (const CellKey& p : parents) {
    bool all = p.level > 0;
    for (int c = 0; c < 9 && all; ++c) {
      const int n = mesh.find_node(p.child(c));
      all = n >= 0 && mesh.node(n).is_real_leaf() &&
            verdict(p.child(c)) == Verdict::Coarsen;
    }
    (all ? plan.coarsen : plan.skipped).push_back(p);
  }
  std::sort(plan.refine.begin(), plan.refine.end());
  return plan;
}

MeshDelta apply_mesh_updates(Mesh& mesh, const UpdatePlan& plan, const TransferOperators& ops,
                             int m, const CellDataAccess& data) {
  if (plan.empty()) return {};
  std::vector<std::pair<CellKey, std::vector<double>>> installs;
  for (const CellKey& p : plan.coarsen) {
    std::array<std::vector<double>, 9> kids;
    for (int c = 0; c < 9; ++c) kids[c] = data.take(p.child(c));
    installs.emplace_back(p, ops.coarsen_volume(kids, m));
  }
  for (const CellKey& k : plan.refine) {
    auto kids = ops.refine_volume(data.take(k), m);
    for (int c = 0; c < 9; ++c) installs.emplace_back(k.child(c), std::move(kids[c]));
  }
  MeshDelta delta = mesh.update(plan.coarsen, plan.refine);
  for (auto& [k, q] : installs) data.put(k, std::move(q));
  return delta;
}

}  // namespace enclave
