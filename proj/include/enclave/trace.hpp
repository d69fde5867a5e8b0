// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace enclave {

enum class TraceEvent : std::uint8_t {
  SpawnSkeleton,
  SpawnEnclave,
  StartSkeleton,
  StartEnclave,
  Finish,
  RiemannBegin,
  RiemannInput,  // one per adjacent local cell whose predictor the solve reads
  RiemannEnd,
  CorrectorBegin,
  CorrectorEnd,
  Send,
  Receive,
  WaitBegin,
  WaitEnd,
  ReceiveWaitBegin,  // agent blocked on a boundary face message
  ReceiveWaitEnd,
  ConsumerBegin,
  ConsumerEnd,
  ConsumerFork,
  SweepBegin,
  SweepEnd,
};

const char* to_string(TraceEvent e);

struct TraceRecord {
  std::int64_t t_ns = 0;
  int worker = 0;
  TraceEvent event = TraceEvent::Finish;
  std::int64_t entity = 0;
  int sweep = 0;
  std::uint64_t seq = 0;
};

/// Identifier of the calling thread in trace records: rank * 1000 + slot,
/// slot 0 being the traversal agent.
int current_worker();
void set_current_worker(int id);

/// Bounded in-memory event log shared by all threads of a world. When full,
/// the oldest records are dropped and counted.
class Tracer {
 public:
  explicit Tracer(bool enabled = true, std::size_t capacity = std::size_t{1} << 22);

  bool enabled() const { return enabled_; }
  void record(TraceEvent event, std::int64_t entity, int sweep);
  void record_as(int worker, TraceEvent event, std::int64_t entity, int sweep);

  /// Records in recording order.
  std::vector<TraceRecord> snapshot() const;
  std::uint64_t dropped() const;
  std::size_t size() const;
  void clear();
  /// CSV with columns t_ns,worker,event,entity,sweep.
  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;

  std::int64_t now_ns() const;

 private:
  bool enabled_;
  std::size_t capacity_;
  std::chrono::steady_clock::time_point epoch_;
  mutable std::mutex mutex_;
  std::vector<TraceRecord> ring_;
  std::size_t head_ = 0;  // index of the oldest record once the ring wrapped
  std::uint64_t seq_ = 0;
  std::uint64_t dropped_ = 0;
};

/// Per-task-type totals derived from paired begin/end records.
struct TaskTimes {
  std::int64_t stp_ns = 0;
  std::int64_t riemann_ns = 0;
  std::int64_t corrector_ns = 0;
  std::int64_t stp_count = 0;
  std::int64_t riemann_count = 0;
  std::int64_t corrector_count = 0;
  std::int64_t agent_wait_ns = 0;
};

TaskTimes aggregate_task_times(const std::vector<TraceRecord>& records);

}  // namespace enclave
