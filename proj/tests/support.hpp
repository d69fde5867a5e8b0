// SPDX-License-Identifier: Apache-2.0
// Independent reference helpers shared by the unit tests.
#pragma once

#include <cmath>
#include <cstring>
#include <random>
#include <utility>
#include <vector>

#include "enclave/solver.hpp"

namespace testing {

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// Horner evaluation of sum_d c[d] x^d.
inline double poly(const std::vector<double>& c, double x) {
  double s = 0.0;
  for (std::size_t d = c.size(); d-- > 0;) s = s * x + c[d];
  return s;
}

/// Gaussian elimination with partial pivoting; A is row-major n x n.
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k * n + j] * x[j];
    x[k] = s / a[k * n + k];
  }
  return x;
}

/// Monomial coefficients of the polynomial through (x_k, y_k).
inline std::vector<double> monomial_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = std::pow(x[i], static_cast<double>(j));
  return solve_dense(v, y);
}

inline bool same_bits(const enclave::Solution& a, const enclave::Solution& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.size() != ib->second.size()) return false;
    if (std::memcmp(ia->second.data(), ib->second.data(), ia->second.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

/// Cell average times area, summed over cells.
inline double total_mass(const enclave::Mesh& mesh, const enclave::Solution& s,
                         const enclave::PolynomialBasis& basis) {
  const int n = basis.size();
  double total = 0.0;
  for (const auto& [key, q] : s) {
    const auto g = mesh.geometry(key.level);
    double cell = 0.0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) cell += basis.weights()[i] * basis.weights()[j] * q[j * n + i];
    total += cell * g.hx * g.hy;
  }
  return total;
}

inline enclave::SolverConfig small_config(int order = 3, int depth = 2) {
  enclave::SolverConfig c;
  c.order = order;
  c.depth = depth;
  c.steps = 3;
  return c;
}

/// Step-profile configuration that refines two levels below the base mesh.
inline enclave::SolverConfig amr_config(int order = 3) {
  enclave::SolverConfig c = small_config(order, 2);
  c.amr = true;
  c.ic = enclave::InitialCondition::Step;
  c.refine_tol = 0.3;
  c.coarsen_tol = 0.02;
  c.max_level = 4;
  return c;
}

}  // namespace testing
