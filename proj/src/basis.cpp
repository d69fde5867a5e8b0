// SPDX-License-Identifier: Apache-2.0
#include "enclave/basis.hpp"

#include <cmath>
#include <numbers>

#include "enclave/error.hpp"

namespace enclave {

int ipow3(int e) {
  int r = 1;
  for (int i = 0; i < e; ++i) r *= 3;
  return r;
}

Quadrature gauss_legendre(int n) {
  if (n < 1 || n > 16) throw ConfigError("gauss_legendre: n must be in [1,16]");
  Quadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  // Newton iteration on P_n over [-1,1], then map to [0,1].
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      double pn = n == 1 ? x : p1;
      double pnm1 = n == 1 ? 1.0 : p0;
      dp = n * (x * pn - pnm1) / (x * x - 1.0);
      double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // recompute derivative at the converged root
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    double pn = n == 1 ? x : p1;
    double pnm1 = n == 1 ? 1.0 : p0;
    dp = n * (x * pn - pnm1) / (x * x - 1.0);
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // x is the i-th largest root
    q.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    q.nodes[i] = 0.5 * (1.0 - x);
    q.weights[n - 1 - i] = 0.5 * w;
    q.weights[i] = 0.5 * w;
  }
  if (n % 2 == 1) q.nodes[n / 2] = 0.5;
  return q;
}

double lagrange(std::span<const double> nodes, int j, double x) {
  double v = 1.0;
  for (int k = 0; k < static_cast<int>(nodes.size()); ++k) {
    if (k == j) continue;
    v *= (x - nodes[k]) / (nodes[j] - nodes[k]);
  }
  return v;
}

PolynomialBasis::PolynomialBasis(int order) : order_(order) {
  if (order < 1 || order > 7) throw ConfigError("polynomial order must be in [1,7]");
  quad_ = gauss_legendre(order + 1);
  const int n = size();
  const auto& x = quad_.nodes;

  std::vector<double> bary(n, 1.0);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (k != j) bary[j] /= (x[j] - x[k]);

  diff_.assign(n * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double diag = 0.0;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      double d = (bary[k] / bary[i]) / (x[i] - x[k]);
      diff_[i * n + k] = d;
      diag -= d;
    }
    diff_[i * n + i] = diag;
  }

  left_.resize(n);
  right_.resize(n);
  for (int k = 0; k < n; ++k) {
    left_[k] = eval(k, 0.0);
    right_[k] = eval(k, 1.0);
  }
}

double PolynomialBasis::eval(int k, double x) const { return lagrange(quad_.nodes, k, x); }

std::vector<double> PolynomialBasis::subinterval_interp(int depth, int offset) const {
  const int n = size();
  const double scale = 1.0 / ipow3(depth);
  std::vector<double> p(n * n);
  for (int k = 0; k < n; ++k) {
    double y = (offset + quad_.nodes[k]) * scale;
    for (int j = 0; j < n; ++j) p[k * n + j] = eval(j, y);
  }
  return p;
}

}  // namespace enclave
