// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "enclave/error.hpp"
#include "enclave/harness.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace enclave;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("enclave_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("dump has one row per node and component") {
    SolverConfig c = testing::small_config(1, 1);
    c.ic = InitialCondition::Constant;
    c.ic_value = 0.75;
    c.steps = 1;
    const SimulationResult r = run_simulation(c);
    std::ostringstream out;
    dump_solution(out, r.mesh, r.solution, PolynomialBasis(1), 1);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "level,ix,iy,node_x,node_y,component,value");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      double v = 0;
      CHECK(std::sscanf(line.c_str() + line.rfind(',') + 1, "%lf", &v) == 1);
      CHECK(v == doctest::Approx(0.75).epsilon(1e-13));
    }
    CHECK(rows == 36);
  }

  TEST_CASE("dump round trip is byte identical") {
    SolverConfig c = testing::amr_config(2);
    c.steps = 2;
    const SimulationResult r = run_simulation(c);
    const PolynomialBasis basis(2);
    const std::string a = temp_path("dump_a.csv"), b = temp_path("dump_b.csv");
    dump_solution(a, r.mesh, r.solution, basis, 1);
    const Solution back = load_dump(a, 2, 1);
    CHECK(testing::same_bits(back, r.solution));
    dump_solution(b, r.mesh, back, basis, 1);
    CHECK(slurp(a) == slurp(b));
    CHECK_THROWS_AS(load_dump(temp_path("missing.csv"), 2, 1), ConfigError);
    std::filesystem::remove(a);
    std::filesystem::remove(b);
  }

  TEST_CASE("scaling suite with one worker count") {
    SolverConfig c = testing::small_config(2, 1);
    c.steps = 1;
    const auto rows = run_scaling_suite(c, {1}, {}, 1);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].workers == 1);
    CHECK(rows[0].speedup == 1.0);
    CHECK(rows[0].wall_s > 0.0);
    std::ostringstream out;
    write_scaling_csv(out, rows);
    CHECK(out.str().rfind("workers,ranks,wall_s,speedup\n", 0) == 0);
  }

  TEST_CASE("timing report json") {
    SolverConfig c = testing::small_config();
    c.trace = true;
    c.steps = 2;
    const SimulationResult r = run_simulation(c);
    std::ostringstream out;
    r.report.write_json(out);
    const auto j = nlohmann::json::parse(out.str());
    for (const char* key : {"mode", "wall_s", "steps", "cells", "dofs_per_step", "totals_ns", "counts",
                            "ns_per_dof_per_step", "sweep_s", "ranks", "unconverged_predictors",
                            "trace_dropped"})
      CHECK(j.contains(key));
    CHECK(j["mode"] == "enclave");
    CHECK(j["steps"] == 2);
    CHECK(j["cells"] == 81);
    CHECK(j["counts"]["stp"].get<std::int64_t>() >= 2 * 81);
  }

  TEST_CASE("median") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  }

  TEST_CASE("kernel cost ordering") {
    SolverConfig c = testing::small_config(5);
    const KernelCosts k = measure_kernel_costs(c, 50);
    MESSAGE("stp " << k.stp_ns << " corrector " << k.corrector_ns << " riemann " << k.riemann_ns << " fv "
                   << k.fv_patch_ns);
    CHECK(k.stp_ns > k.corrector_ns);
    CHECK(k.corrector_ns > k.riemann_ns);
    CHECK(k.fv_patch_ns > k.stp_ns);
  }
}
