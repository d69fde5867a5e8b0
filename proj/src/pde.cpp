// SPDX-License-Identifier: Apache-2.0
#include "enclave/pde.hpp"

#include <cmath>

#include "enclave/error.hpp"

namespace enclave {

double Advection::wave_speed(std::span<const double>, int axis) const {
  return std::abs(velocity_[axis]);
}

double Burgers::wave_speed(std::span<const double> q, int) const { return std::abs(q[0]); }

std::unique_ptr<Pde> make_pde(const std::string& name) {
  if (name == "advection") return std::make_unique<Advection>();
  if (name == "burgers") return std::make_unique<Burgers>();
  throw ConfigError("unknown pde '" + name + "'");
}

}  // namespace enclave
