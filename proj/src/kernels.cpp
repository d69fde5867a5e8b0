// SPDX-License-Identifier: Apache-2.0
#include "enclave/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "enclave/error.hpp"

namespace enclave {

namespace {

/// Gauss-Legendre nodes in time plus the integration matrix
/// I[l][k] = int_0^{tau_l} psi_k(s) ds of the time Lagrange basis.
struct TimeRule {
  Quadrature quad;
  std::vector<double> integration;
};

const TimeRule& time_rule(int order) {
  static const std::array<TimeRule, 8> rules = [] {
    std::array<TimeRule, 8> r;
    for (int p = 1; p <= 7; ++p) {
      const int nt = 2 * p + 1;
      TimeRule& tr = r[p];
      tr.quad = gauss_legendre(nt);
      tr.integration.assign(nt * nt, 0.0);
      for (int l = 0; l < nt; ++l) {
        const double tau = tr.quad.nodes[l];
        for (int k = 0; k < nt; ++k) {
          double s = 0.0;
          for (int g = 0; g < nt; ++g)
            s += tr.quad.weights[g] * lagrange(tr.quad.nodes, k, tau * tr.quad.nodes[g]);
          tr.integration[l * nt + k] = tau * s;
        }
      }
    }
    return r;
  }();
  return rules[order];
}

/// out = -(Dx Fx(q) / hx + Dy Fy(q) / hy), the cell-local strong-form operator.
void apply_divergence(const KernelContext& ctx, std::span<const double> q, std::span<double> out,
                      std::vector<double>& fx, std::vector<double>& fy) {
  const int n = ctx.basis.size();
  const int m = ctx.pde.components();
  const int nodes = n * n;
  fx.resize(nodes * m);
  fy.resize(nodes * m);
  for (int c = 0; c < nodes; ++c) {
    ctx.pde.flux(q.subspan(c * m, m), 0, std::span<double>(fx.data() + c * m, m));
    ctx.pde.flux(q.subspan(c * m, m), 1, std::span<double>(fy.data() + c * m, m));
  }
  const double ihx = 1.0 / ctx.geom.hx;
  const double ihy = 1.0 / ctx.geom.hy;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      for (int v = 0; v < m; ++v) {
        double dx = 0.0, dy = 0.0;
        for (int k = 0; k < n; ++k) {
          dx += ctx.basis.diff(i, k) * fx[(j * n + k) * m + v];
          dy += ctx.basis.diff(j, k) * fy[(k * n + i) * m + v];
        }
        out[(j * n + i) * m + v] = -(dx * ihx + dy * ihy);
      }
    }
  }
}

void volume_flux(const KernelContext& ctx, std::span<const double> q, std::span<double> out) {
  const int m = ctx.pde.components();
  const std::size_t nodes = q.size() / m;
  for (std::size_t c = 0; c < nodes; ++c) {
    ctx.pde.flux(q.subspan(c * m, m), 0, out.subspan(c * m, m));
    ctx.pde.flux(q.subspan(c * m, m), 1, out.subspan(nodes * m + c * m, m));
  }
}

}  // namespace

void Predictor::resize(int n, int m) {
  const std::size_t vol = static_cast<std::size_t>(n) * n * m;
  q_avg.assign(vol, 0.0);
  flux_avg.assign(2 * vol, 0.0);
  q_end.assign(vol, 0.0);
  faces.assign(4 * static_cast<std::size_t>(n) * m, 0.0);
}

void stp_linear(const KernelContext& ctx, std::span<const double> q, double dt, Predictor& out) {
  const int n = ctx.basis.size();
  const int m = ctx.pde.components();
  const std::size_t vol = static_cast<std::size_t>(n) * n * m;
  out.resize(n, m);

  std::vector<double> term(q.begin(), q.end());
  std::vector<double> next(vol);
  std::vector<double> fx, fy;
  std::copy(q.begin(), q.end(), out.q_avg.begin());
  std::copy(q.begin(), q.end(), out.q_end.begin());

  double avg_coeff = 1.0;  // dt^k / (k+1)!
  double end_coeff = 1.0;  // dt^k / k!
  for (int k = 1; k <= 2 * ctx.basis.order(); ++k) {
    apply_divergence(ctx, term, next, fx, fy);
    term.swap(next);
    end_coeff *= dt / k;
    avg_coeff *= dt / (k + 1);
    for (std::size_t c = 0; c < vol; ++c) {
      out.q_end[c] += end_coeff * term[c];
      out.q_avg[c] += avg_coeff * term[c];
    }
  }
  volume_flux(ctx, out.q_avg, out.flux_avg);
  project_to_faces(ctx.basis, m, out.q_avg, out.faces);
  out.iterations = 0;
  out.converged = true;
}

int stp_picard(const KernelContext& ctx, std::span<const double> q, double dt, double tol,
               int max_iter, Predictor& out) {
  const int n = ctx.basis.size();
  const int m = ctx.pde.components();
  const std::size_t vol = static_cast<std::size_t>(n) * n * m;
  const TimeRule& rule = time_rule(ctx.basis.order());
  const int nt = static_cast<int>(rule.quad.nodes.size());
  out.resize(n, m);

  std::vector<double> states(nt * vol);
  for (int l = 0; l < nt; ++l) std::copy(q.begin(), q.end(), states.begin() + l * vol);
  std::vector<double> ops(nt * vol);
  std::vector<double> fx, fy;

  int iterations = 0;
  bool converged = false;
  while (iterations < max_iter) {
    ++iterations;
    for (int l = 0; l < nt; ++l)
      apply_divergence(ctx, std::span<const double>(states.data() + l * vol, vol),
                       std::span<double>(ops.data() + l * vol, vol), fx, fy);
    double diff = 0.0;
    for (int l = 0; l < nt; ++l) {
      for (std::size_t c = 0; c < vol; ++c) {
        double acc = 0.0;
        for (int k = 0; k < nt; ++k) acc += rule.integration[l * nt + k] * ops[k * vol + c];
        const double updated = q[c] + dt * acc;
        diff = std::max(diff, std::abs(updated - states[l * vol + c]));
        states[l * vol + c] = updated;
      }
    }
    if (diff < tol) {
      converged = true;
      break;
    }
  }

  for (int l = 0; l < nt; ++l)
    apply_divergence(ctx, std::span<const double>(states.data() + l * vol, vol),
                     std::span<double>(ops.data() + l * vol, vol), fx, fy);
  std::vector<double> flux_l(2 * vol);
  for (int l = 0; l < nt; ++l) {
    const double w = rule.quad.weights[l];
    volume_flux(ctx, std::span<const double>(states.data() + l * vol, vol), flux_l);
    for (std::size_t c = 0; c < vol; ++c) {
      out.q_avg[c] += w * states[l * vol + c];
      out.q_end[c] += w * ops[l * vol + c];
    }
    for (std::size_t c = 0; c < 2 * vol; ++c) out.flux_avg[c] += w * flux_l[c];
  }
  for (std::size_t c = 0; c < vol; ++c) out.q_end[c] = q[c] + dt * out.q_end[c];
  project_to_faces(ctx.basis, m, out.q_avg, out.faces);
  out.iterations = iterations;
  out.converged = converged;
  return iterations;
}

double synthetic_work(std::int64_t cost_units) {
  double x = 0.5;
  for (std::int64_t k = 0; k < cost_units; ++k) x = std::fma(x, 0.9999999, 1e-7);
  return x;
}

void synthetic_stp(const KernelContext& ctx, std::span<const double> q, std::int64_t cost_units,
                   Predictor& out) {
  const int n = ctx.basis.size();
  const int m = ctx.pde.components();
  out.resize(n, m);
  std::copy(q.begin(), q.end(), out.q_avg.begin());
  std::copy(q.begin(), q.end(), out.q_end.begin());
  volume_flux(ctx, out.q_avg, out.flux_avg);
  project_to_faces(ctx.basis, m, out.q_avg, out.faces);
  out.iterations = 0;
  out.converged = true;
  out.checksum = synthetic_work(cost_units);
}

void project_to_faces(const PolynomialBasis& basis, int m, std::span<const double> volume,
                      std::span<double> faces) {
  const int n = basis.size();
  const std::size_t len = static_cast<std::size_t>(n) * m;
  for (int k = 0; k < n; ++k) {
    for (int v = 0; v < m; ++v) {
      double l = 0.0, r = 0.0, b = 0.0, t = 0.0;
      for (int s = 0; s < n; ++s) {
        l += basis.left(s) * volume[(k * n + s) * m + v];
        r += basis.right(s) * volume[(k * n + s) * m + v];
        b += basis.left(s) * volume[(s * n + k) * m + v];
        t += basis.right(s) * volume[(s * n + k) * m + v];
      }
      faces[kMinusX * len + k * m + v] = l;
      faces[kPlusX * len + k * m + v] = r;
      faces[kMinusY * len + k * m + v] = b;
      faces[kPlusY * len + k * m + v] = t;
    }
  }
}

void riemann_rusanov(std::span<const double> inner, std::span<const double> outer, const Pde& pde,
                     int axis, int sign, std::span<double> out) {
  const int m = pde.components();
  const std::size_t points = inner.size() / m;
  double fi[8], fo[8];
  for (std::size_t k = 0; k < points; ++k) {
    auto qi = inner.subspan(k * m, m);
    auto qo = outer.subspan(k * m, m);
    const double li = pde.wave_speed(qi, axis);
    const double lo = pde.wave_speed(qo, axis);
    const double lambda = li > lo ? li : lo;
    pde.flux(qi, axis, std::span<double>(fi, m));
    pde.flux(qo, axis, std::span<double>(fo, m));
    for (int v = 0; v < m; ++v) {
      const double a = sign * fi[v];
      const double b = sign * fo[v];
      out[k * m + v] = 0.5 * (a + b) - 0.5 * lambda * (qo[v] - qi[v]);
    }
  }
}

void corrector(const KernelContext& ctx, std::span<double> q, const Predictor& pred,
               const std::array<std::span<const double>, 4>& face_flux, double dt) {
  const auto& basis = ctx.basis;
  const int n = basis.size();
  const int m = ctx.pde.components();
  const std::size_t vol = static_cast<std::size_t>(n) * n * m;
  const auto& w = basis.weights();
  const double cx = dt / ctx.geom.hx;
  const double cy = dt / ctx.geom.hy;
  const double* fx = pred.flux_avg.data();
  const double* fy = pred.flux_avg.data() + vol;

  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      for (int v = 0; v < m; ++v) {
        double vx = 0.0, vy = 0.0;
        for (int k = 0; k < n; ++k) {
          vx += w[k] * basis.diff(k, i) * fx[(j * n + k) * m + v];
          vy += w[k] * basis.diff(k, j) * fy[(k * n + i) * m + v];
        }
        const double sx = basis.right(i) * face_flux[kPlusX][j * m + v] -
                          basis.left(i) * face_flux[kMinusX][j * m + v];
        const double sy = basis.right(j) * face_flux[kPlusY][i * m + v] -
                          basis.left(j) * face_flux[kMinusY][i * m + v];
        q[(j * n + i) * m + v] += cx * ((vx - sx) / w[i]) + cy * ((vy - sy) / w[j]);
      }
    }
  }
}

double cell_wave_speed(const Pde& pde, std::span<const double> q) {
  const int m = pde.components();
  double lambda = 0.0;
  for (std::size_t c = 0; c + m <= q.size(); c += m)
    lambda = std::max(lambda, pde.max_eigenvalue(q.subspan(c, m)));
  return lambda;
}

double admissible_dt(std::span<const double> cell_h, std::span<const double> cell_lambda, int order,
                     double cfl_safety) {
  double dt = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cell_h.size(); ++c) {
    if (!(cell_lambda[c] > 0.0)) continue;
    dt = std::min(dt, cfl_safety * cell_h[c] / ((2 * order + 1) * cell_lambda[c]));
  }
  if (!std::isfinite(dt)) throw NumericalError("admissible_dt: no positive wave speed in any cell");
  return dt;
}

FvPatch::FvPatch(int cells_per_axis, int components, double dx_, double dy_)
    : cells(cells_per_axis),
      m(components),
      dx(dx_),
      dy(dy_),
      data(static_cast<std::size_t>(cells_per_axis + 2) * (cells_per_axis + 2) * components, 0.0) {}

void FvPatch::fill_halo_outflow() {
  for (int k = 0; k < cells; ++k) {
    for (int v = 0; v < m; ++v) {
      at(-1, k, v) = at(0, k, v);
      at(cells, k, v) = at(cells - 1, k, v);
      at(k, -1, v) = at(k, 0, v);
      at(k, cells, v) = at(k, cells - 1, v);
    }
  }
  halo_filled = true;
}

void fv_patch_update(FvPatch& patch, const Pde& pde, double dt) {
  if (!patch.halo_filled) throw Error("fv_patch_update: halo layer not filled");
  const int n = patch.cells;
  const int m = patch.m;
  std::vector<double> next(patch.data);
  std::vector<double> g(m);
  auto state = [&](int i, int j) {
    return std::span<const double>(patch.data.data() + ((j + 1) * (n + 2) + (i + 1)) * m, m);
  };
  // x faces: between (i-1,j) and (i,j) for i in [0,n]
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i <= n; ++i) {
      riemann_rusanov(state(i - 1, j), state(i, j), pde, 0, 1, g);
      for (int v = 0; v < m; ++v) {
        if (i > 0) next[((j + 1) * (n + 2) + i) * m + v] -= dt / patch.dx * g[v];
        if (i < n) next[((j + 1) * (n + 2) + i + 1) * m + v] += dt / patch.dx * g[v];
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= n; ++j) {
      riemann_rusanov(state(i, j - 1), state(i, j), pde, 1, 1, g);
      for (int v = 0; v < m; ++v) {
        if (j > 0) next[(j * (n + 2) + i + 1) * m + v] -= dt / patch.dy * g[v];
        if (j < n) next[((j + 1) * (n + 2) + i + 1) * m + v] += dt / patch.dy * g[v];
      }
    }
  }
  patch.data.swap(next);
  patch.halo_filled = false;
}

double fv_cell_kernel(const KernelContext& ctx, std::span<const double> q, double dt, FvPatch& patch) {
  const int p = ctx.basis.order();
  const int n = ctx.basis.size();
  const int m = ctx.pde.components();
  const int cells = 2 * p + 1;
  if (patch.cells != cells || patch.m != m)
    patch = FvPatch(cells, m, ctx.geom.hx / cells, ctx.geom.hy / cells);

  // sample the cell polynomial at the sub-volume centres
  std::vector<double> phi(static_cast<std::size_t>(cells) * n);
  for (int a = 0; a < cells; ++a)
    for (int k = 0; k < n; ++k) phi[a * n + k] = ctx.basis.eval(k, (a + 0.5) / cells);
  for (int b = 0; b < cells; ++b)
    for (int a = 0; a < cells; ++a)
      for (int v = 0; v < m; ++v) {
        double s = 0.0;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) s += phi[a * n + i] * phi[b * n + j] * q[(j * n + i) * m + v];
        patch.at(a, b, v) = s;
      }

  const double lambda = std::max(cell_wave_speed(ctx.pde, q), 1e-12);
  const double dt_fv = 0.1 * std::min(patch.dx, patch.dy) / lambda;
  const int substeps = std::max(1, static_cast<int>(std::ceil(dt / dt_fv)));
  for (int s = 0; s < substeps; ++s) {
    patch.fill_halo_outflow();
    fv_patch_update(patch, ctx.pde, dt / substeps);
  }
  double checksum = 0.0;
  for (int b = 0; b < cells; ++b)
    for (int a = 0; a < cells; ++a) checksum += patch.at(a, b, 0);
  return checksum;
}

}  // namespace enclave
