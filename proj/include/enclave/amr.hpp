// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "enclave/basis.hpp"
#include "enclave/mesh.hpp"

namespace enclave {

/// Inter-resolution transfer of face traces and volume data.
///
/// A child position is a sub-segment of the parent face: `depth` levels
/// finer, `offset` in [0, 3^depth) along the tangent.
class TransferOperators {
 public:
  explicit TransferOperators(const PolynomialBasis& basis) : basis_(basis) {}

  const PolynomialBasis& basis() const { return basis_; }

  /// (p+1)x(p+1) row-major interpolation matrix for one child position.
  std::vector<double> interp_matrix(int depth, int offset) const;
  /// Adjoint of interp_matrix under the quadrature inner products.
  std::vector<double> restrict_matrix(int depth, int offset) const;

  void interpolate(std::span<const double> parent, int m, int depth, int offset,
                   std::span<double> child) const;
  void restrict_trace(std::span<const double> child, int m, int depth, int offset,
                      std::span<double> out) const;

  /// Evaluates the parent cell polynomial at the nodes of its 9 children.
  std::array<std::vector<double>, 9> refine_volume(std::span<const double> parent, int m) const;
  /// L2 projection of the 9 children onto the parent, summed in child order.
  std::vector<double> coarsen_volume(const std::array<std::vector<double>, 9>& children,
                                     int m) const;

 private:
  const PolynomialBasis& basis_;
};

/// Per-face accumulator for restricted child-face outcomes. Every child owns
/// one slot; the parent value is the slot sum in child order, so the result
/// does not depend on the order in which children are restricted.
class RestrictionAccumulator {
 public:
  void reset(int children, std::size_t len, int sweep);
  /// The first deposit of a new sweep clears all slots. Throws SchedulingError
  /// when the same child is restricted twice in a sweep.
  void deposit(int child, int children, std::span<const double> value, int sweep);
  bool complete() const;
  int sweep() const { return sweep_; }
  /// Sums all slots into `out`; throws if a slot is missing.
  void finalize(std::span<double> out) const;

 private:
  int sweep_ = -1;
  std::size_t len_ = 0;
  std::vector<double> slots_;
  std::vector<char> filled_;
};

enum class Verdict { Keep, Refine, Coarsen };
const char* to_string(Verdict v);

struct RefinementCriterion {
  double refine_tol = 1e300;
  double coarsen_tol = 0.0;
  int min_level = 1;
  int max_level = 1;

  void validate() const;
};

/// Max over nodes and components of |grad Q| scaled by the cell width.
double gradient_indicator(const PolynomialBasis& basis, int m, std::span<const double> q);

Verdict evaluate_refinement_criterion(const PolynomialBasis& basis, int m,
                                      std::span<const double> q, int level,
                                      const RefinementCriterion& criterion);

struct UpdatePlan {
  std::vector<CellKey> refine;
  std::vector<CellKey> coarsen;   // parents whose 9 children all vote Coarsen
  std::vector<CellKey> skipped;   // parents with mixed votes among Coarsen voters

  bool empty() const { return refine.empty() && coarsen.empty(); }
};

UpdatePlan plan_mesh_updates(const Mesh& mesh, const std::map<CellKey, Verdict>& verdicts);

/// Cell data access used while the mesh changes. `take` removes the data of
/// a cell that disappears, `put` installs data for a new cell.
struct CellDataAccess {
  std::function<std::vector<double>(const CellKey&)> take;
  std::function<void(const CellKey&, std::vector<double>)> put;
};

/// Coarsenings first, then refinements, each in key order.
MeshDelta apply_mesh_updates(Mesh& mesh, const UpdatePlan& plan, const TransferOperators& ops,
                             int m, const CellDataAccess& data);

}  // namespace enclave
