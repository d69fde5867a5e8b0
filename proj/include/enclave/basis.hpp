// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace enclave {

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule with n points on [0,1]; 1 <= n <= 16.
Quadrature gauss_legendre(int n);

/// Value of the j-th Lagrange polynomial over `nodes` at x.
double lagrange(std::span<const double> nodes, int j, double x);

/// Nodal Lagrange basis over the Gauss-Legendre points of order p.
///
/// All operators act on the reference interval [0,1]; callers scale
/// derivatives by the cell width. Node index k runs over [0, p].
class PolynomialBasis {
 public:
  explicit PolynomialBasis(int order);

  int order() const { return order_; }
  int size() const { return order_ + 1; }

  const std::vector<double>& nodes() const { return quad_.nodes; }
  const std::vector<double>& weights() const { return quad_.weights; }

  /// d(phi_k)/dx evaluated at node i.
  double diff(int i, int k) const { return diff_[i * size() + k]; }
  /// phi_k(0) and phi_k(1).
  double left(int k) const { return left_[k]; }
  double right(int k) const { return right_[k]; }

  double eval(int k, double x) const;

  /// Row-major (p+1)x(p+1) matrix P with P[k][j] = phi_j(y_k), where y_k are
  /// the nodes mapped into the sub-interval [offset, offset+1] * 3^-depth.
  std::vector<double> subinterval_interp(int depth, int offset) const;

 private:
  int order_;
  Quadrature quad_;
  std::vector<double> diff_;
  std::vector<double> left_;
  std::vector<double> right_;
};

int ipow3(int e);

}  // namespace enclave
