// SPDX-License-Identifier: Apache-2.0
#include "enclave/ranks.hpp"

#include <algorithm>
#include <charconv>

#include "enclave/error.hpp"

namespace enclave {

Decomposition decompose(const Mesh& mesh, int ranks) {
  const int n = static_cast<int>(mesh.cells().size());
  if (ranks < 1 || ranks > n)
    throw ConfigError("decompose: rank count " + std::to_string(ranks) + " outside [1, " +
                      std::to_string(n) + "]");
  Decomposition d;
  d.ranks = ranks;
  d.counts.assign(ranks, n / ranks);
  for (int r = 0; r < n % ranks; ++r) ++d.counts[r];
  int pos = 0;
  for (int r = 0; r < ranks; ++r)
    for (int k = 0; k < d.counts[r]; ++k, ++pos) d.owner[mesh.node(mesh.cells()[pos]).key] = r;
  return d;
}

void apply_decomposition(Mesh& mesh, const Decomposition& d) { mesh.set_owners(d.owner, d.ranks); }

LatencyModel LatencyModel::parse(const std::string& text) {
  auto number = [&](std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v < 0)
      throw ConfigError("invalid latency '" + text + "'");
    return v;
  };
  LatencyModel m;
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    m.min_ns = m.max_ns = number(text);
  } else {
    m.min_ns = number(std::string_view(text).substr(0, colon));
    m.max_ns = number(std::string_view(text).substr(colon + 1));
    if (m.max_ns < m.min_ns) throw ConfigError("invalid latency range '" + text + "'");
  }
  return m;
}

Channel::Channel(LatencyModel latency, std::uint64_t seed) : latency_(latency), rng_(seed) {}

void Channel::send(FaceMessage message, std::int64_t now_ns) {
  std::lock_guard lock(mutex_);
  std::int64_t lat = latency_.min_ns;
  if (!latency_.fixed())
    lat = std::uniform_int_distribution<std::int64_t>(latency_.min_ns, latency_.max_ns)(rng_);
  message.deliver_ns = std::max(last_deliver_, now_ns + lat);
  last_deliver_ = message.deliver_ns;
  queue_.push_back(std::move(message));
}

bool Channel::deliverable(std::int64_t now_ns) const {
  std::lock_guard lock(mutex_);
  return !queue_.empty() && queue_.front().deliver_ns <= now_ns;
}

std::optional<FaceMessage> Channel::pop(std::int64_t now_ns) {
  std::lock_guard lock(mutex_);
  if (queue_.empty() || queue_.front().deliver_ns > now_ns) return std::nullopt;
  FaceMessage m = std::move(queue_.front());
  queue_.pop_front();
  return m;
}

std::size_t Channel::size() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

Network::Network(int ranks, LatencyModel latency, std::uint64_t seed)
    : ranks_(ranks), epoch_(std::chrono::steady_clock::now()) {
  if (ranks < 1) throw ConfigError("network: rank count must be >= 1");
  for (int from = 0; from < ranks; ++from)
    for (int to = 0; to < ranks; ++to)
      channels_.push_back(std::make_unique<Channel>(latency, seed * 7919 + from * ranks + to));
}

Channel& Network::channel(int from, int to) {
  if (from < 0 || to < 0 || from >= ranks_ || to >= ranks_)
    throw InvalidTargetError("network: no channel " + std::to_string(from) + "->" + std::to_string(to));
  return *channels_[from * ranks_ + to];
}

std::int64_t Network::now_ns() const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                              epoch_)
      .count();
}

RankEndpoint::RankEndpoint(Network& network, int rank, Tracer* tracer)
    : network_(network), rank_(rank), tracer_(tracer) {}

void RankEndpoint::send_face(int to, int face_id, int sweep, std::span<const double> payload) {
  if (sweep != sent_sweep_) {
    sent_.clear();
    sent_sweep_ = sweep;
  }
  if (!sent_.insert({face_id, sweep, to}).second)
    throw SchedulingError("duplicate send of face " + std::to_string(face_id) + " in sweep " +
                          std::to_string(sweep) + " to rank " + std::to_string(to));
  FaceMessage m;
  m.face_id = face_id;
  m.sweep = sweep;
  m.payload.assign(payload.begin(), payload.end());
  m.from = rank_;
  if (tracer_) tracer_->record(TraceEvent::Send, face_id, sweep);
  network_.channel(rank_, to).send(std::move(m), network_.now_ns());
}

bool RankEndpoint::deliverable(int from) const {
  return network_.channel(from, rank_).deliverable(network_.now_ns());
}

std::optional<int> RankEndpoint::probe() {
  const int r = network_.ranks();
  const std::int64_t now = network_.now_ns();
  for (int k = 0; k < r; ++k) {
    const int from = (probe_cursor_ + k) % r;
    if (from == rank_) continue;
    if (network_.channel(from, rank_).deliverable(now)) {
      probe_cursor_ = (from + 1) % r;
      return from;
    }
  }
  return std::nullopt;
}

std::optional<FaceMessage> RankEndpoint::receive(int from) {
  auto m = network_.channel(from, rank_).pop(network_.now_ns());
  if (m && tracer_) tracer_->record(TraceEvent::Receive, m->face_id, m->sweep);
  return m;
}

}  // namespace enclave
