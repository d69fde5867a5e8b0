// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "enclave/basis.hpp"
#include "enclave/pde.hpp"

namespace enclave {

// Volume data layout: value (i, j, v) lives at ((j * n) + i) * m + v where i
// runs along x, j along y and n = p + 1. Face traces are stored per side
// (0: -x, 1: +x, 2: -y, 3: +y) as n points times m components, the point index
// running along the face tangent.

enum Side : int { kMinusX = 0, kPlusX = 1, kMinusY = 2, kPlusY = 3 };

constexpr int side_axis(int side) { return side / 2; }
constexpr int opposite_side(int side) { return side ^ 1; }

struct CellGeometry {
  double hx = 1.0;
  double hy = 1.0;
};

/// Output of a space-time predictor. All face and flux data are averages
/// over (T, T+dt); the corrector multiplies them by dt.
struct Predictor {
  std::vector<double> q_avg;
  std::vector<double> flux_avg;  // x block followed by y block
  std::vector<double> q_end;     // Q*(T+dt)
  std::vector<double> faces;     // 4 sides
  int iterations = 0;
  bool converged = true;
  double checksum = 0.0;

  void resize(int n, int m);
  std::span<const double> face(int side) const {
    const std::size_t len = faces.size() / 4;
    return {faces.data() + side * len, len};
  }
};

struct KernelContext {
  const PolynomialBasis& basis;
  const Pde& pde;
  CellGeometry geom;
};

/// Cauchy-Kowalevski expansion for linear homogeneous fluxes. The series is
/// carried to order 2p, where it terminates for tensor polynomial data.
void stp_linear(const KernelContext& ctx, std::span<const double> q, double dt, Predictor& out);

/// Picard iteration on the space-time collocation system with 2p+1
/// Gauss-Legendre time nodes. Returns the number of iterations performed.
int stp_picard(const KernelContext& ctx, std::span<const double> q, double dt, double tol,
               int max_iter, Predictor& out);

/// Time-frozen predictor plus a deterministic floating-point recurrence of
/// `cost_units` steps, used to emulate expensive cell tasks.
void synthetic_stp(const KernelContext& ctx, std::span<const double> q, std::int64_t cost_units,
                   Predictor& out);

/// Burns `cost_units` iterations of a fixed recurrence and returns its state.
double synthetic_work(std::int64_t cost_units);

/// Extrapolates volume data to the four cell faces.
void project_to_faces(const PolynomialBasis& basis, int m, std::span<const double> volume,
                      std::span<double> faces);

/// Rusanov flux along normal sign * e_axis between the state behind the face
/// (`inner`) and in front of it (`outer`), pointwise over the face nodes.
void riemann_rusanov(std::span<const double> inner, std::span<const double> outer, const Pde& pde,
                     int axis, int sign, std::span<double> out);

/// Updates q in place from the predictor and the four face fluxes. Each
/// face flux points along +axis.
void corrector(const KernelContext& ctx, std::span<double> q, const Predictor& pred,
               const std::array<std::span<const double>, 4>& face_flux, double dt);

/// Max wave speed over all nodes of a cell.
double cell_wave_speed(const Pde& pde, std::span<const double> q);

/// cfl * min_c h_c / ((2p+1) lambda_c) over cells with lambda_c > 0.
double admissible_dt(std::span<const double> cell_h, std::span<const double> cell_lambda, int order,
                     double cfl_safety);

/// Finite-volume patch with one halo layer.
struct FvPatch {
  int cells = 0;  // per axis
  int m = 1;
  double dx = 1.0;
  double dy = 1.0;
  bool halo_filled = false;
  std::vector<double> data;  // (cells+2)^2 * m

  FvPatch() = default;
  FvPatch(int cells_per_axis, int components, double dx_, double dy_);

  double& at(int i, int j, int v) { return data[((j + 1) * (cells + 2) + (i + 1)) * m + v]; }
  double at(int i, int j, int v) const {
    return data[((j + 1) * (cells + 2) + (i + 1)) * m + v];
  }
  /// Copies the outermost interior layer into the halo.
  void fill_halo_outflow();
};

/// First-order Rusanov update of all interior volumes.
void fv_patch_update(FvPatch& patch, const Pde& pde, double dt);

/// Heavy cell kernel: samples the cell polynomial onto a (2p+1)^2 patch and
/// advances it over dt with CFL-limited sub-steps. Returns a checksum.
double fv_cell_kernel(const KernelContext& ctx, std::span<const double> q, double dt, FvPatch& patch);

}  // namespace enclave
