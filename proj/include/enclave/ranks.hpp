// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "enclave/mesh.hpp"
#include "enclave/trace.hpp"

namespace enclave {

struct Decomposition {
  int ranks = 1;
  std::map<CellKey, int> owner;
  std::vector<int> counts;  // cells per rank
};

/// Splits the space-filling-curve order of the mesh cells into `ranks`
/// contiguous segments whose sizes differ by at most one.
Decomposition decompose(const Mesh& mesh, int ranks);
void apply_decomposition(Mesh& mesh, const Decomposition& d);

/// Delivery latency in nanoseconds, fixed or uniform in [min, max].
struct LatencyModel {
  std::int64_t min_ns = 0;
  std::int64_t max_ns = 0;

  /// Accepts "<ns>" or "<min>:<max>".
  static LatencyModel parse(const std::string& text);
  bool fixed() const { return min_ns == max_ns; }
};

struct FaceMessage {
  int face_id = -1;
  int sweep = 0;
  std::vector<double> payload;
  int from = 0;
  std::int64_t deliver_ns = 0;
};

/// Directed FIFO channel. A message becomes deliverable at
/// max(previous delivery, send time + latency), so FIFO order survives any
/// latency draw.
class Channel {
 public:
  Channel(LatencyModel latency, std::uint64_t seed);

  void send(FaceMessage message, std::int64_t now_ns);
  bool deliverable(std::int64_t now_ns) const;
  std::optional<FaceMessage> pop(std::int64_t now_ns);
  std::size_t size() const;

 private:
  LatencyModel latency_;
  mutable std::mutex mutex_;
  std::deque<FaceMessage> queue_;
  std::int64_t last_deliver_ = 0;
  std::mt19937_64 rng_;
};

/// All directed channels of a world plus its clock.
class Network {
 public:
  Network(int ranks, LatencyModel latency, std::uint64_t seed);

  int ranks() const { return ranks_; }
  Channel& channel(int from, int to);
  std::int64_t now_ns() const;

 private:
  int ranks_;
  std::chrono::steady_clock::time_point epoch_;
  std::vector<std::unique_ptr<Channel>> channels_;
};

/// Message end point of one rank.
class RankEndpoint {
 public:
  RankEndpoint(Network& network, int rank, Tracer* tracer);

  int rank() const { return rank_; }
  /// Non-blocking. Throws SchedulingError on a duplicate (face, sweep, target).
  void send_face(int to, int face_id, int sweep, std::span<const double> payload);
  /// Source rank of one deliverable message, scanning channels round-robin.
  std::optional<int> probe();
  /// Deliverable head of the channel from `from`, if any.
  std::optional<FaceMessage> receive(int from);
  bool deliverable(int from) const;

 private:
  Network& network_;
  int rank_;
  Tracer* tracer_;
  int probe_cursor_ = 0;
  std::set<std::tuple<int, int, int>> sent_;
  int sent_sweep_ = -1;
};

}  // namespace enclave
