// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <limits>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "enclave/error.hpp"
#include "enclave/ranks.hpp"
#include "support.hpp"

using namespace enclave;

namespace {

constexpr std::int64_t kLater = std::numeric_limits<std::int64_t>::max() / 2;

std::set<int> brute_force_boundary(const Mesh& m) {
  std::set<int> out;
  for (int fi = 0; fi < static_cast<int>(m.faces().size()); ++fi) {
    const Face& f = m.face(fi);
    if (f.kind != FaceKind::Regular && f.kind != FaceKind::Child) continue;
    if (m.owner(f.sides[0].owner) != m.owner(f.sides[1].owner)) out.insert(fi);
  }
  return out;
}

Mesh random_mesh(std::mt19937_64& rng) {
  Mesh m = Mesh::build_uniform(1, {}, true, 4);
  for (int op = 0; op < 8; ++op) {
    const CellKey k = m.node(m.cells()[rng() % m.cells().size()]).key;
    if (k.level < 4) m.refine_cell(k);
  }
  return m;
}

}  // namespace

TEST_SUITE("ranks") {
  TEST_CASE("single rank owns everything") {
    Mesh m = Mesh::build_uniform(2);
    const Decomposition d = decompose(m, 1);
    CHECK(d.counts == std::vector<int>{81});
    apply_decomposition(m, d);
    for (int c : m.cells()) CHECK(m.owner(m.node(c).key) == 0);
    for (const Face& f : m.faces()) CHECK_FALSE(m.is_rank_boundary(f));
    CHECK(boundary_face_order(m, 0, 0).empty());
  }

  TEST_CASE("balanced contiguous split") {
    const Mesh m = Mesh::build_uniform(2);
    const Decomposition d = decompose(m, 2);
    CHECK(d.counts == std::vector<int>{41, 40});
    CHECK_THROWS_AS(decompose(m, 0), ConfigError);
    CHECK_THROWS_AS(decompose(m, 82), ConfigError);
    CHECK_NOTHROW(decompose(m, 81));
  }

  TEST_CASE("three ranks on nine cells") {
    Mesh m = Mesh::build_uniform(1, {}, false);
    apply_decomposition(m, decompose(m, 3));
    std::vector<int> per(3, 0);
    for (int c : m.cells()) ++per[m.owner(m.node(c).key)];
    CHECK(per == std::vector<int>{3, 3, 3});
    const std::set<int> expected = brute_force_boundary(m);
    std::set<int> listed;
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        for (int f : boundary_face_order(m, a, b)) CHECK(listed.insert(f).second);
    CHECK(listed == expected);
    CHECK_FALSE(expected.empty());
  }

  TEST_CASE("decomposition of adaptive meshes is contiguous and balanced") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
      Mesh m = random_mesh(rng);
      const int ranks = 1 + static_cast<int>(rng() % 7);
      const Decomposition d = decompose(m, ranks);
      CHECK(*std::max_element(d.counts.begin(), d.counts.end()) -
                *std::min_element(d.counts.begin(), d.counts.end()) <=
            1);
      int prev = 0;
      for (int c : m.cells()) {
        const int r = d.owner.at(m.node(c).key);
        CHECK(r >= prev);
        CHECK(r <= prev + 1);
        prev = r;
      }
      apply_decomposition(m, d);
      std::set<int> listed;
      for (int a = 0; a < ranks; ++a)
        for (int b = a + 1; b < ranks; ++b) {
          const auto ab = boundary_face_order(m, a, b);
          CHECK(ab == boundary_face_order(m, b, a));
          listed.insert(ab.begin(), ab.end());
        }
      CHECK(listed == brute_force_boundary(m));
    }
  }

  TEST_CASE("latency parsing") {
    CHECK(LatencyModel::parse("0").fixed());
    const LatencyModel a = LatencyModel::parse("1500");
    CHECK(a.min_ns == 1500);
    CHECK(a.max_ns == 1500);
    const LatencyModel b = LatencyModel::parse("10:20");
    CHECK(b.min_ns == 10);
    CHECK(b.max_ns == 20);
    CHECK_FALSE(b.fixed());
    for (const char* bad : {"", "x", "-1", "20:10", "5:", "1:2:3"})
      CHECK_THROWS_AS(LatencyModel::parse(bad), ConfigError);
  }

  TEST_CASE("channels stay FIFO under random latency") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Channel ch({0, 1000000}, seed);
      for (int k = 0; k < 200; ++k) {
        FaceMessage m;
        m.face_id = k;
        ch.send(m, k * 100);
      }
      std::int64_t last = 0;
      for (int k = 0; k < 200; ++k) {
        auto m = ch.pop(kLater);
        REQUIRE(m);
        CHECK(m->face_id == k);
        CHECK(m->deliver_ns >= last);
        last = m->deliver_ns;
      }
      CHECK(ch.size() == 0);
    }
    Channel slow({1000, 1000}, 1);
    slow.send(FaceMessage{}, 0);
    CHECK_FALSE(slow.deliverable(999));
    CHECK_FALSE(slow.pop(999));
    CHECK(slow.deliverable(1000));
  }

  TEST_CASE("endpoints: duplicates, probe and payload integrity") {
    Network net(2, {0, 0}, 1);
    RankEndpoint r0(net, 0, nullptr), r1(net, 1, nullptr);
    CHECK_FALSE(r1.probe());

    std::mt19937_64 rng(5);
    const auto payload = testing::random_vector(rng, 12);
    r0.send_face(1, 17, 3, payload);
    CHECK_THROWS_AS(r0.send_face(1, 17, 3, payload), SchedulingError);
    CHECK_NOTHROW(r0.send_face(1, 17, 4, payload));

    auto from = r1.probe();
    REQUIRE(from);
    CHECK(*from == 0);
    auto msg = r1.receive(0);
    REQUIRE(msg);
    CHECK(msg->face_id == 17);
    CHECK(msg->sweep == 3);
    CHECK(msg->from == 0);
    CHECK(std::memcmp(msg->payload.data(), payload.data(), payload.size() * sizeof(double)) == 0);
    REQUIRE(r1.receive(0));
    CHECK_FALSE(r1.probe());
    CHECK_FALSE(r1.receive(0));
    CHECK_THROWS_AS(net.channel(0, 2), InvalidTargetError);
  }

  TEST_CASE("probe drains several channels, FIFO per channel") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Network net(3, {0, 20000}, seed);
      RankEndpoint r0(net, 0, nullptr), r1(net, 1, nullptr), r2(net, 2, nullptr);
      const std::vector<double> pl{1.0};
      for (int k = 0; k < 20; ++k) {
        r1.send_face(0, k, 0, pl);
        r2.send_face(0, 100 + k, 0, pl);
      }
      std::vector<int> got1, got2;
      while (got1.size() + got2.size() < 40) {
        auto from = r0.probe();
        if (!from) {
          std::this_thread::yield();
          continue;
        }
        auto m = r0.receive(*from);
        REQUIRE(m);
        (*from == 1 ? got1 : got2).push_back(m->face_id);
      }
      for (int k = 0; k < 20; ++k) {
        CHECK(got1[k] == k);
        CHECK(got2[k] == 100 + k);
      }
      CHECK_FALSE(r0.probe());
    }
  }

  TEST_CASE("a message of the wrong sweep aborts the world with the rank id") {
    SolverConfig c = testing::small_config(2, 2);
    c.ranks = 2;
    c.scheduler.deadlock_timeout = std::chrono::milliseconds(2000);
    Discretization disc(c);
    World world(disc, build_initial_state(disc));
    const auto order = boundary_face_order(world.mesh(), 0, 1);
    REQUIRE_FALSE(order.empty());
    FaceMessage bogus;
    bogus.face_id = world.mesh().face(order.front()).id;
    bogus.sweep = 99;
    bogus.from = 1;
    bogus.payload.assign(disc.trace_size(), 0.0);
    world.network().channel(1, 0).send(bogus, 0);
    try {
      world.run(2);
      FAIL("expected a scheduling violation");
    } catch (const SchedulingError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find("rank 0") != std::string::npos);
      CHECK(std::string(e.what()).find("sweep 99") != std::string::npos);
    }
  }

  TEST_CASE("redundant boundary solves agree bitwise") {
    for (int ranks : {2, 3}) {
      SolverConfig c = testing::amr_config(3);
      c.ranks = ranks;
      c.scheduler.workers = 2;
      c.latency = LatencyModel::parse("0:50000");
      Discretization disc(c);
      World world(disc, build_initial_state(disc));
      world.run(4);
      CHECK(world.redundant_checks() > 0);
      CHECK(world.redundant_mismatches() == 0);
      std::int64_t sends = 0, receives = 0;
      for (const RankReport& r : world.reports()) {
        sends += r.sends;
        receives += r.receives;
      }
      CHECK(sends == receives);
      CHECK(sends > 0);
    }
  }
}
