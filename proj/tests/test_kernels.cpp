// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "enclave/error.hpp"
#include "enclave/kernels.hpp"
#include "support.hpp"

using namespace enclave;

namespace {

std::vector<double> sample(const PolynomialBasis& b, double hx, double hy,
                           const std::function<double(double, double)>& f) {
  const int n = b.size();
  std::vector<double> q(n * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) q[j * n + i] = f(hx * b.nodes()[i], hy * b.nodes()[j]);
  return q;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

// Cell-local semi-discrete right-hand side for scalar Burgers, written
// independently of the kernel code.
std::vector<double> burgers_rhs(const PolynomialBasis& b, double h, const std::vector<double>& q) {
  const int n = b.size();
  std::vector<double> f(q.size()), r(q.size(), 0.0);
  for (std::size_t c = 0; c < q.size(); ++c) f[c] = 0.5 * q[c] * q[c];
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) r[j * n + i] -= (b.diff(i, k) * f[j * n + k] + b.diff(j, k) * f[k * n + i]) / h;
  return r;
}

std::vector<double> rk4(const PolynomialBasis& b, double h, std::vector<double> q, double t, int steps) {
  const double dt = t / steps;
  auto axpy = [](const std::vector<double>& x, double a, const std::vector<double>& y) {
    std::vector<double> z(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) z[k] = x[k] + a * y[k];
    return z;
  };
  for (int s = 0; s < steps; ++s) {
    auto k1 = burgers_rhs(b, h, q);
    auto k2 = burgers_rhs(b, h, axpy(q, dt / 2, k1));
    auto k3 = burgers_rhs(b, h, axpy(q, dt / 2, k2));
    auto k4 = burgers_rhs(b, h, axpy(q, dt, k3));
    for (std::size_t c = 0; c < q.size(); ++c) q[c] += dt / 6 * (k1[c] + 2 * k2[c] + 2 * k3[c] + k4[c]);
  }
  return q;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("Rusanov flux analytic values") {
    const Advection adv;
    const Burgers burgers;
    std::vector<double> out(1);
    const std::vector<double> two{2.0}, one{1.0}, zero{0.0};

    riemann_rusanov(two, two, adv, 0, 1, out);
    CHECK(out[0] == 2.0);
    riemann_rusanov(one, zero, adv, 0, 1, out);
    CHECK(out[0] == 1.0);
    riemann_rusanov(two, zero, burgers, 0, 1, out);
    CHECK(out[0] == 3.0);
  }

  TEST_CASE("Rusanov flux from the opposite side is the exact negation") {
    std::mt19937_64 rng(11);
    const Advection adv;
    const Burgers burgers;
    for (const Pde* pde : {static_cast<const Pde*>(&adv), static_cast<const Pde*>(&burgers)}) {
      for (int trial = 0; trial < 200; ++trial) {
        const auto a = testing::random_vector(rng, 6, -3, 3);
        const auto b = testing::random_vector(rng, 6, -3, 3);
        const int axis = trial % 2;
        std::vector<double> fwd(6), back(6);
        riemann_rusanov(a, b, *pde, axis, 1, fwd);
        riemann_rusanov(b, a, *pde, axis, -1, back);
        for (int k = 0; k < 6; ++k) CHECK(fwd[k] == -back[k]);
      }
    }
  }

  TEST_CASE("linear predictor of a constant state is constant") {
    const PolynomialBasis b(3);
    const Advection adv;
    const KernelContext ctx{b, adv, {1.0 / 9, 1.0 / 9}};
    const std::vector<double> q(16, 2.5);
    Predictor pred;
    stp_linear(ctx, q, 0.01, pred);
    for (double v : pred.q_end) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));
    for (double v : pred.q_avg) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));
    for (double v : pred.faces) CHECK(v == doctest::Approx(2.5).epsilon(1e-13));

    const std::vector<double> z(16, 0.0);
    stp_linear(ctx, z, 0.01, pred);
    for (double v : pred.q_end) CHECK(v == 0.0);
    for (double v : pred.faces) CHECK(v == 0.0);
  }

  TEST_CASE("linear predictor shifts polynomial data along characteristics") {
    std::mt19937_64 rng(5);
    const Advection adv;  // velocity (1, 0.5)
    for (int p = 1; p <= 5; ++p) {
      const PolynomialBasis b(p);
      const double h = 1.0 / 9;
      const KernelContext ctx{b, adv, {h, h}};
      const auto cx = testing::random_vector(rng, p + 1);
      const auto cy = testing::random_vector(rng, p + 1);
      auto exact = [&](double x, double y) { return testing::poly(cx, x) * testing::poly(cy, y); };
      const double dt = 0.01;
      const auto q = sample(b, h, h, exact);
      Predictor pred;
      stp_linear(ctx, q, dt, pred);
      const auto shifted = sample(b, h, h, [&](double x, double y) { return exact(x - dt, y - 0.5 * dt); });
      CHECK(max_diff(pred.q_end, shifted) < 1e-12);

      // time average by composite Gauss quadrature of the exact solution
      const Quadrature tq = gauss_legendre(8);
      const auto avg = sample(b, h, h, [&](double x, double y) {
        double s = 0.0;
        for (int g = 0; g < 8; ++g) s += tq.weights[g] * exact(x - tq.nodes[g] * dt, y - 0.5 * tq.nodes[g] * dt);
        return s;
      });
      CHECK(max_diff(pred.q_avg, avg) < 1e-12);
    }
  }

  TEST_CASE("linear profile shifts exactly") {
    const PolynomialBasis b(3);
    const Advection adv;
    const KernelContext ctx{b, adv, {1.0, 1.0}};
    const auto q = sample(b, 1.0, 1.0, [](double x, double) { return x; });
    Predictor pred;
    stp_linear(ctx, q, 1e-3, pred);
    const auto shifted = sample(b, 1.0, 1.0, [](double x, double) { return x - 1e-3; });
    CHECK(max_diff(pred.q_end, shifted) < 1e-15);
  }

  TEST_CASE("Picard predictor fixed points") {
    const PolynomialBasis b(3);
    const Burgers burgers;
    const KernelContext ctx{b, burgers, {0.1, 0.1}};
    Predictor pred;
    const std::vector<double> z(16, 0.0);
    CHECK(stp_picard(ctx, z, 0.01, 1e-10, 8, pred) == 1);
    CHECK(pred.converged);
    for (double v : pred.q_end) CHECK(v == 0.0);
    for (double v : pred.faces) CHECK(v == 0.0);

    const std::vector<double> c(16, 1.5);
    stp_picard(ctx, c, 0.01, 1e-10, 8, pred);
    CHECK(pred.converged);
    for (double v : pred.q_end) CHECK(v == doctest::Approx(1.5).epsilon(1e-13));
    for (double v : pred.q_avg) CHECK(v == doctest::Approx(1.5).epsilon(1e-13));
  }

  TEST_CASE("Picard on a linear PDE reproduces the Cauchy-Kowalevski predictor") {
    std::mt19937_64 rng(9);
    const Advection adv;
    for (int p = 1; p <= 4; ++p) {
      const PolynomialBasis b(p);
      const KernelContext ctx{b, adv, {1.0 / 27, 1.0 / 27}};
      const auto q = testing::random_vector(rng, (p + 1) * (p + 1));
      Predictor lin, pic;
      stp_linear(ctx, q, 0.003, lin);
      stp_picard(ctx, q, 0.003, 1e-15, 100, pic);
      CHECK(max_diff(lin.q_end, pic.q_end) < 1e-12);
      CHECK(max_diff(lin.q_avg, pic.q_avg) < 1e-12);
      CHECK(max_diff(lin.faces, pic.faces) < 1e-12);
      CHECK(max_diff(lin.flux_avg, pic.flux_avg) < 1e-12);
    }
  }

  TEST_CASE("Picard end state matches a fine RK4 solve of the cell ODE") {
    const PolynomialBasis b(3);
    const Burgers burgers;
    const double h = 1.0;
    const KernelContext ctx{b, burgers, {h, h}};
    const auto q = sample(b, h, h, [](double x, double y) {
      return 1.0 + 0.5 * std::sin(2 * std::numbers::pi * x) * std::cos(2 * std::numbers::pi * y);
    });
    double prev_err = 1.0;
    for (double dt : {0.02, 0.01}) {
      Predictor pred;
      stp_picard(ctx, q, dt, 1e-15, 200, pred);
      CHECK(pred.converged);
      const auto ref = rk4(b, h, q, dt, 400);
      const double err = max_diff(pred.q_end, ref);
      CHECK(err <= std::pow(dt, 4));
      CHECK(err < prev_err);
      prev_err = err;
    }
  }

  TEST_CASE("Picard reports non-convergence at the iteration limit") {
    const PolynomialBasis b(3);
    const Burgers burgers;
    const KernelContext ctx{b, burgers, {0.1, 0.1}};
    std::mt19937_64 rng(3);
    const auto q = testing::random_vector(rng, 16, 0.5, 2.0);
    Predictor pred;
    CHECK(stp_picard(ctx, q, 0.01, 1e-30, 2, pred) == 2);
    CHECK_FALSE(pred.converged);
  }

  TEST_CASE("face projection evaluates the polynomial on the cell boundary") {
    std::mt19937_64 rng(13);
    for (int p = 1; p <= 7; ++p) {
      const PolynomialBasis b(p);
      const int n = b.size();
      const auto cx = testing::random_vector(rng, n);
      const auto cy = testing::random_vector(rng, n);
      auto f = [&](double x, double y) { return testing::poly(cx, x) * testing::poly(cy, y); };
      const auto q = sample(b, 1.0, 1.0, f);
      std::vector<double> faces(4 * n);
      project_to_faces(b, 1, q, faces);
      for (int k = 0; k < n; ++k) {
        const double t = b.nodes()[k];
        CHECK(std::abs(faces[kMinusX * n + k] - f(0.0, t)) < 1e-13);
        CHECK(std::abs(faces[kPlusX * n + k] - f(1.0, t)) < 1e-13);
        CHECK(std::abs(faces[kMinusY * n + k] - f(t, 0.0)) < 1e-13);
        CHECK(std::abs(faces[kPlusY * n + k] - f(t, 1.0)) < 1e-13);
      }
    }
    const PolynomialBasis b(2);
    const auto q = sample(b, 1.0, 1.0, [](double x, double) { return x; });
    std::vector<double> faces(12);
    project_to_faces(b, 1, q, faces);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(faces[kMinusX * 3 + k]) < 1e-15);
      CHECK(std::abs(faces[kPlusX * 3 + k] - 1.0) < 1e-15);
    }
  }

  TEST_CASE("corrector leaves a constant state unchanged") {
    const PolynomialBasis b(3);
    const Advection adv;
    const KernelContext ctx{b, adv, {1.0 / 9, 1.0 / 9}};
    std::vector<double> q(16, 3.0);
    Predictor pred;
    stp_linear(ctx, q, 0.01, pred);
    const std::vector<double> fx(4, 3.0), fy(4, 1.5);
    corrector(ctx, q, pred, {fx, fx, fy, fy}, 0.01);
    for (double v : q) CHECK(v == doctest::Approx(3.0).epsilon(1e-14));
  }

  TEST_CASE("admissible time step formula") {
    const std::vector<double> h(81, 1.0 / 9), lam(81, 1.0);
    CHECK(admissible_dt(h, lam, 3, 0.9) == doctest::Approx(0.9 / (9 * 7)).epsilon(1e-15));

    std::vector<double> hr = h;
    hr[40] = 1.0 / 27;
    CHECK(admissible_dt(hr, lam, 3, 0.9) == doctest::Approx(admissible_dt(h, lam, 3, 0.9) / 3).epsilon(1e-15));

    const std::vector<double> l2(81, 2.0), l4(81, 4.0);
    CHECK(admissible_dt(h, l4, 3, 0.9) == doctest::Approx(admissible_dt(h, l2, 3, 0.9) / 2).epsilon(1e-15));

    const std::vector<double> l0(81, 0.0);
    CHECK_THROWS_AS(admissible_dt(h, l0, 3, 0.9), NumericalError);
  }

  TEST_CASE("finite-volume patch: constant state and halo contract") {
    const Advection adv;
    FvPatch patch(5, 1, 0.1, 0.1);
    std::fill(patch.data.begin(), patch.data.end(), 0.7);
    patch.fill_halo_outflow();
    fv_patch_update(patch, adv, 0.01);
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 5; ++i) CHECK(patch.at(i, j, 0) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK_FALSE(patch.halo_filled);
    CHECK_THROWS_AS(fv_patch_update(patch, adv, 0.01), Error);
  }

  TEST_CASE("finite-volume upwind step from an inflow halo") {
    const Advection adv;
    const double dx = 0.1, nu = 0.4;
    FvPatch patch(3, 1, dx, dx);
    for (int j = 0; j < 3; ++j) patch.at(-1, j, 0) = 1.0;
    patch.halo_filled = true;
    fv_patch_update(patch, adv, nu * dx);
    for (int j = 0; j < 3; ++j) {
      CHECK(patch.at(0, j, 0) == doctest::Approx(nu).epsilon(1e-15));
      CHECK(patch.at(1, j, 0) == 0.0);
      CHECK(patch.at(2, j, 0) == 0.0);
    }
  }

  TEST_CASE("finite-volume Riemann problem converges to the transported step") {
    const Advection adv({1.0, 0.0});
    const double t_end = 0.25;
    std::vector<double> errors;
    for (int cells : {40, 80, 160}) {
      const double dx = 1.0 / cells;
      FvPatch patch(cells, 1, dx, dx);
      for (int j = 0; j < cells; ++j)
        for (int i = 0; i < cells; ++i) patch.at(i, j, 0) = (i + 0.5) * dx < 0.5 ? 1.0 : 0.0;
      const int steps = static_cast<int>(std::lround(t_end / (0.5 * dx)));
      for (int s = 0; s < steps; ++s) {
        patch.fill_halo_outflow();
        fv_patch_update(patch, adv, t_end / steps);
      }
      double l1 = 0.0;
      for (int i = 0; i < cells; ++i) {
        const double exact = (i + 0.5) * dx < 0.5 + t_end ? 1.0 : 0.0;
        l1 += std::abs(patch.at(i, cells / 2, 0) - exact) * dx;
      }
      // first-order upwind smears a jump over O(sqrt(t dx)) cells
      CHECK(l1 <= 2.0 * std::sqrt(t_end * dx));
      errors.push_back(l1);
    }
    CHECK(errors[1] < errors[0]);
    CHECK(errors[2] < errors[1]);
  }

  TEST_CASE("synthetic predictor: identity, determinism, linear cost") {
    const PolynomialBasis b(2);
    const Advection adv;
    const KernelContext ctx{b, adv, {0.1, 0.1}};
    std::mt19937_64 rng(1);
    const auto q = testing::random_vector(rng, 9);
    Predictor a, c;
    synthetic_stp(ctx, q, 0, a);
    for (int k = 0; k < 9; ++k) {
      CHECK(a.q_end[k] == q[k]);
      CHECK(a.q_avg[k] == q[k]);
    }
    synthetic_stp(ctx, q, 12345, a);
    synthetic_stp(ctx, q, 12345, c);
    CHECK(a.checksum == c.checksum);

    auto time_of = [](std::int64_t units) {
      std::vector<double> t;
      for (int r = 0; r < 7; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        volatile double sink = synthetic_work(units);
        (void)sink;
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      std::sort(t.begin(), t.end());
      return t[3];
    };
    const double ratio = time_of(1000000) / time_of(100000);
    INFO("time ratio 1e6/1e5 = " << ratio);
    CHECK(ratio >= 8.0);
    CHECK(ratio <= 12.0);
  }
}
