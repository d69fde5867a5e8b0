// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>

namespace enclave {

/// Conservation law dQ/dt + div F(Q) = 0 in two space dimensions.
class Pde {
 public:
  virtual ~Pde() = default;

  virtual int components() const = 0;
  virtual bool is_linear() const = 0;
  virtual std::string name() const = 0;

  /// Flux component along `axis` at a single point.
  virtual void flux(std::span<const double> q, int axis, std::span<double> f) const = 0;
  /// Upper bound of the spectral radius of dF_axis/dQ at q.
  virtual double wave_speed(std::span<const double> q, int axis) const = 0;

  double max_eigenvalue(std::span<const double> q) const {
    double a = wave_speed(q, 0);
    double b = wave_speed(q, 1);
    return a > b ? a : b;
  }
};

class Advection final : public Pde {
 public:
  explicit Advection(std::array<double, 2> velocity = {1.0, 0.5}) : velocity_(velocity) {}

  int components() const override { return 1; }
  bool is_linear() const override { return true; }
  std::string name() const override { return "advection"; }
  void flux(std::span<const double> q, int axis, std::span<double> f) const override {
    f[0] = velocity_[axis] * q[0];
  }
  double wave_speed(std::span<const double>, int axis) const override;

  const std::array<double, 2>& velocity() const { return velocity_; }

 private:
  std::array<double, 2> velocity_;
};

/// Scalar Burgers equation with F_axis(q) = q^2/2 along both axes.
class Burgers final : public Pde {
 public:
  int components() const override { return 1; }
  bool is_linear() const override { return false; }
  std::string name() const override { return "burgers"; }
  void flux(std::span<const double> q, int, std::span<double> f) const override {
    f[0] = 0.5 * q[0] * q[0];
  }
  double wave_speed(std::span<const double> q, int) const override;
};

std::unique_ptr<Pde> make_pde(const std::string& name);

}  // namespace enclave
