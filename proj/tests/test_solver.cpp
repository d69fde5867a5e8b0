// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "doctest.h"
#include "enclave/error.hpp"
#include "enclave/harness.hpp"
#include "support.hpp"

using namespace enclave;

namespace {

Solution oracle_solution(const SolverConfig& c) { return run_oracle(c).solution; }

struct Rect {
  long long x0, y0, size;
};

Rect rect_of(const CellKey& k, int finest) {
  const long long s = ipow3(finest - k.level);
  return {k.ix * s, k.iy * s, s};
}

bool overlaps_1d(long long a0, long long a1, long long b0, long long b1, long long period) {
  for (long long shift : {-period, 0LL, period})
    if (a0 < b1 + shift && b0 + shift < a1) return true;
  return false;
}

}  // namespace

TEST_SUITE("solver") {
  TEST_CASE("configuration parsing and validation") {
    CHECK(parse_kernel("aderdg") == KernelKind::AderDg);
    CHECK(parse_kernel("fv") == KernelKind::FiniteVolume);
    CHECK(parse_kernel("synthetic") == KernelKind::Synthetic);
    CHECK(parse_ic("const") == InitialCondition::Constant);
    CHECK(parse_ic("step") == InitialCondition::Step);
    CHECK(parse_rank_mode("interleaved") == RankMode::Interleaved);
    CHECK_THROWS_AS(parse_kernel("weno"), ConfigError);

    SolverConfig c;
    c.pde = "burgers";
    c.fused = true;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.fused = false;
    CHECK_NOTHROW(c.validate());
    c.order = 8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.order = 3;
    c.pde = "euler";
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("zero steps return the initial condition") {
    SolverConfig c = testing::small_config();
    c.steps = 0;
    Discretization disc(c);
    const InitialState init = build_initial_state(disc);
    CHECK(testing::same_bits(run_simulation(c).solution, init.solution));
    CHECK(testing::same_bits(run_oracle(c).solution, init.solution));
  }

  TEST_CASE("constant state stays constant") {
    for (const char* pde : {"advection", "burgers"}) {
      SolverConfig c = testing::small_config();
      c.pde = pde;
      c.ic = InitialCondition::Constant;
      c.ic_value = 1.3;
      c.steps = 4;
      for (const Solution& s : {run_oracle(c).solution, run_simulation(c).solution})
        for (const auto& [k, q] : s)
          for (double v : q) CHECK(v == doctest::Approx(1.3).epsilon(1e-13));
    }
  }

  TEST_CASE("oracle is deterministic") {
    SolverConfig c = testing::amr_config();
    c.steps = 4;
    CHECK(testing::same_bits(oracle_solution(c), oracle_solution(c)));
  }

  TEST_CASE("single worker enclave run equals the oracle") {
    for (auto v : {SchedulerVariant::NativeTasks, SchedulerVariant::FifoConsumers,
                   SchedulerVariant::PriorityConsumers}) {
      SolverConfig c = testing::small_config();
      c.steps = 5;
      c.scheduler.variant = v;
      CHECK(testing::same_bits(run_simulation(c).solution, oracle_solution(c)));
    }
  }

  TEST_CASE("fused and non-fused spawning agree bitwise") {
    for (bool amr : {false, true}) {
      SolverConfig c = amr ? testing::amr_config() : testing::small_config();
      c.steps = 5;
      c.scheduler.workers = 3;
      const Solution plain = run_simulation(c).solution;
      c.fused = true;
      CHECK(testing::same_bits(run_simulation(c).solution, plain));
      CHECK(testing::same_bits(oracle_solution(c), plain));
    }
  }

  TEST_CASE("adaptive run with eight workers equals the oracle") {
    SolverConfig c = testing::amr_config();
    c.steps = 6;
    c.scheduler.workers = 8;
    const SimulationResult r = run_simulation(c);
    const SimulationResult o = run_oracle(c);
    CHECK(r.mesh.finest_level() == 4);
    CHECK(testing::same_bits(r.solution, o.solution));
  }

  TEST_CASE("rank count and latency do not change the result") {
    SolverConfig c = testing::amr_config();
    c.steps = 4;
    const Solution ref = oracle_solution(c);
    for (int ranks : {1, 2, 3})
      for (const char* lat : {"0", "0:200000"})
        for (RankMode mode : {RankMode::Parallel, RankMode::Interleaved}) {
          c.ranks = ranks;
          c.latency = LatencyModel::parse(lat);
          c.rank_mode = mode;
          c.scheduler.workers = 2;
          INFO("ranks " << ranks << " latency " << lat);
          CHECK(testing::same_bits(run_simulation(c).solution, ref));
        }
  }

  TEST_CASE("Burgers enclave run equals the oracle") {
    SolverConfig c = testing::amr_config();
    c.pde = "burgers";
    c.steps = 4;
    c.ranks = 2;
    c.scheduler.workers = 2;
    CHECK(testing::same_bits(run_simulation(c).solution, oracle_solution(c)));
  }

  TEST_CASE("alternative predictor kernels keep oracle equivalence") {
    for (KernelKind k : {KernelKind::FiniteVolume, KernelKind::Synthetic}) {
      SolverConfig c = testing::small_config(2, 2);
      c.kernel = k;
      c.synthetic_cost = 1000;
      c.steps = 3;
      c.ranks = 2;
      c.scheduler.workers = 2;
      CHECK(testing::same_bits(run_simulation(c).solution, oracle_solution(c)));
    }
  }

  TEST_CASE("continued runs equal one long run") {
    SolverConfig c = testing::amr_config();
    c.ranks = 2;
    Discretization disc(c);
    World a(disc, build_initial_state(disc));
    a.run(2);
    a.run(3);
    World b(disc, build_initial_state(disc));
    b.run(5);
    CHECK(testing::same_bits(a.solution(), b.solution()));
  }

  TEST_CASE("parallel-for baseline") {
    SolverConfig c = testing::small_config();
    c.steps = 4;
    for (int workers : {1, 3}) {
      c.scheduler.workers = workers;
      CHECK(testing::same_bits(run_baseline(c).solution, oracle_solution(c)));
    }
    c.pde = "burgers";
    CHECK(testing::same_bits(run_baseline(c).solution, oracle_solution(c)));
    SolverConfig a = testing::amr_config();
    CHECK_THROWS_AS(run_baseline(a), ConfigError);
  }

  TEST_CASE("non-finite data raises a numerical error with the step index") {
    SolverConfig c = testing::small_config();
    c.ic = InitialCondition::Constant;
    c.ic_value = std::numeric_limits<double>::quiet_NaN();
    c.steps = 2;
    for (int mode = 0; mode < 2; ++mode) {
      try {
        if (mode == 0)
          run_oracle(c);
        else
          run_simulation(c);
        FAIL("expected a numerical error");
      } catch (const NumericalError& e) {
        INFO(e.what());
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
      }
    }
    std::vector<double> q{1.0, std::numeric_limits<double>::infinity()};
    try {
      check_finite(q, {2, 1, 4}, 7);
      FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("step 7") != std::string::npos);
      CHECK(std::string(e.what()).find("(2,1,4)") != std::string::npos);
    }
  }

  TEST_CASE("total mass is conserved on adaptive meshes") {
    SolverConfig c = testing::amr_config();
    c.ic = InitialCondition::Sine;
    c.refine_tol = 0.1;
    c.coarsen_tol = 0.01;
    Discretization disc(c);
    Oracle oracle(disc, build_initial_state(disc));
    double mass = testing::total_mass(oracle.mesh(), oracle.solution(), disc.basis());
    for (int s = 0; s < 8; ++s) {
      oracle.step();
      const double next = testing::total_mass(oracle.mesh(), oracle.solution(), disc.basis());
      CHECK(std::abs(next - mass) <= 1e-12 * std::abs(mass));
      mass = next;
    }
    CHECK(oracle.mesh().finest_level() > c.depth);
  }

  TEST_CASE("cells change class only next to existing transitions") {
    SolverConfig c = testing::amr_config();
    Discretization disc(c);
    Oracle oracle(disc, build_initial_state(disc));
    const int finest = c.max_level;
    const long long period = ipow3(finest);
    int changed_total = 0;
    for (int s = 0; s < 10; ++s) {
      std::map<CellKey, CellClass> before;
      std::vector<Rect> transitions;
      const Mesh prev = oracle.mesh();
      for (int n : prev.cells()) {
        const CellClass cls = classify_cell(prev, n);
        before[prev.node(n).key] = cls;
        if (cls == CellClass::Skeleton) transitions.push_back(rect_of(prev.node(n).key, finest));
      }
      // cells refined or coarsened in this step count as transitions as well
      oracle.step();
      const Mesh& next = oracle.mesh();
      std::set<CellKey> now;
      for (int n : next.cells()) now.insert(next.node(n).key);
      for (const auto& [k, cls] : before)
        if (!now.count(k)) transitions.push_back(rect_of(k, finest));
      for (int n : next.cells()) {
        const CellKey k = next.node(n).key;
        auto it = before.find(k);
        if (it == before.end() || it->second == classify_cell(next, n)) continue;
        ++changed_total;
        const Rect r = rect_of(k, finest);
        bool near = false;
        for (const Rect& t : transitions)
          near = near || (overlaps_1d(r.x0 - r.size, r.x0 + 2 * r.size, t.x0, t.x0 + t.size, period) &&
                          overlaps_1d(r.y0 - r.size, r.y0 + 2 * r.size, t.y0, t.y0 + t.size, period));
        INFO("cell (" << k.level << "," << k.ix << "," << k.iy << ") at step " << s);
        CHECK(near);
      }
    }
    MESSAGE("class changes observed: " << changed_total);
  }

  TEST_CASE("time step rule") {
    SolverConfig c = testing::small_config(3, 2);
    c.cfl = 0.9;
    Discretization disc(c);
    const InitialState st = build_initial_state(disc);
    const TimeStepRule rule(disc, st.mesh, st.solution);
    CHECK(rule.constant());
    CHECK(rule.constant_dt() == doctest::Approx(0.9 / (9 * 7)).epsilon(1e-14));
    c.pde = "burgers";
    Discretization db(c);
    const TimeStepRule rb(db, st.mesh, st.solution);
    CHECK_FALSE(rb.constant());
    const std::vector<double> h{1.0 / 9}, l2{2.0}, l4{4.0};
    CHECK(rb.from_samples(h, l4) == doctest::Approx(rb.from_samples(h, l2) / 2).epsilon(1e-15));
  }
}
