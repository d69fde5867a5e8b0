// SPDX-License-Identifier: Apache-2.0
#include "enclave/trace.hpp"

#include <fstream>
#include <ostream>
#include <unordered_map>

#include "enclave/error.hpp"

namespace enclave {

namespace {
thread_local int tls_worker = 0;
}

int current_worker() { return tls_worker; }
void set_current_worker(int id) { tls_worker = id; }

const char* to_string(TraceEvent e) {
  switch (e) {
    case TraceEvent::SpawnSkeleton: return "spawn_skeleton";
    case TraceEvent::SpawnEnclave: return "spawn_enclave";
    case TraceEvent::StartSkeleton: return "start_skeleton";
    case TraceEvent::StartEnclave: return "start_enclave";
    case TraceEvent::Finish: return "finish";
    case TraceEvent::RiemannBegin: return "riemann_begin";
    case TraceEvent::RiemannInput: return "riemann_input";
    case TraceEvent::RiemannEnd: return "riemann_end";
    case TraceEvent::CorrectorBegin: return "corrector_begin";
    case TraceEvent::CorrectorEnd: return "corrector_end";
    case TraceEvent::Send: return "send";
    case TraceEvent::Receive: return "receive";
    case TraceEvent::WaitBegin: return "wait_begin";
    case TraceEvent::WaitEnd: return "wait_end";
    case TraceEvent::ConsumerBegin: return "consumer_begin";
    case TraceEvent::ConsumerEnd: return "consumer_end";
    case TraceEvent::ConsumerFork: return "consumer_fork";
    case TraceEvent::SweepBegin: return "sweep_begin";
    case TraceEvent::ReceiveWaitBegin: return "receive_wait_begin";
    case TraceEvent::ReceiveWaitEnd: return "receive_wait_end";
    case TraceEvent::SweepEnd: return "sweep_end";
  }
  return "?";
}

Tracer::Tracer(bool enabled, std::size_t capacity)
    : enabled_(enabled), capacity_(capacity == 0 ? 1 : capacity), epoch_(std::chrono::steady_clock::now()) {}

std::int64_t Tracer::now_ns() const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                              epoch_)
      .count();
}

void Tracer::record(TraceEvent event, std::int64_t entity, int sweep) {
  record_as(tls_worker, event, entity, sweep);
}

void Tracer::record_as(int worker, TraceEvent event, std::int64_t entity, int sweep) {
  if (!enabled_) return;
  const std::int64_t t = now_ns();
  std::lock_guard lock(mutex_);
  TraceRecord r{t, worker, event, entity, sweep, seq_++};
  if (ring_.size() < capacity_) {
    ring_.push_back(r);
    return;
  }
  ring_[head_] = r;
  head_ = (head_ + 1) % capacity_;
  ++dropped_;
}

std::vector<TraceRecord> Tracer::snapshot() const {
  std::lock_guard lock(mutex_);
  std::vector<TraceRecord> out;
  out.reserve(ring_.size());
  for (std::size_t i = 0; i < ring_.size(); ++i) out.push_back(ring_[(head_ + i) % ring_.size()]);
  return out;
}

std::uint64_t Tracer::dropped() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

std::size_t Tracer::size() const {
  std::lock_guard lock(mutex_);
  return ring_.size();
}

void Tracer::clear() {
  std::lock_guard lock(mutex_);
  ring_.clear();
  head_ = 0;
  dropped_ = 0;
}

void Tracer::write_csv(std::ostream& out) const {
  out << "t_ns,worker,event,entity,sweep\n";
  for (const TraceRecord& r : snapshot())
    out << r.t_ns << ',' << r.worker << ',' << to_string(r.event) << ',' << r.entity << ','
        << r.sweep << '\n';
}

void Tracer::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trace '" + path + "'");
  write_csv(out);
  if (!out) throw Error("write failed for trace '" + path + "'");
}

TaskTimes aggregate_task_times(const std::vector<TraceRecord>& records) {
  TaskTimes t;
  // open intervals keyed by worker; a worker runs one task at a time
  std::unordered_map<int, std::int64_t> stp, riemann, corrector, wait;
  for (const TraceRecord& r : records) {
    switch (r.event) {
      case TraceEvent::StartSkeleton:
      case TraceEvent::StartEnclave: stp[r.worker] = r.t_ns; break;
      case TraceEvent::Finish:
        if (auto it = stp.find(r.worker); it != stp.end()) {
          t.stp_ns += r.t_ns - it->second;
          ++t.stp_count;
          stp.erase(it);
        }
        break;
      case TraceEvent::RiemannBegin: riemann[r.worker] = r.t_ns; break;
      case TraceEvent::RiemannEnd:
        if (auto it = riemann.find(r.worker); it != riemann.end()) {
          t.riemann_ns += r.t_ns - it->second;
          ++t.riemann_count;
          riemann.erase(it);
        }
        break;
      case TraceEvent::CorrectorBegin: corrector[r.worker] = r.t_ns; break;
      case TraceEvent::CorrectorEnd:
        if (auto it = corrector.find(r.worker); it != corrector.end()) {
          t.corrector_ns += r.t_ns - it->second;
          ++t.corrector_count;
          corrector.erase(it);
        }
        break;
      case TraceEvent::WaitBegin:
      case TraceEvent::ReceiveWaitBegin: wait[r.worker] = r.t_ns; break;
      case TraceEvent::WaitEnd:
      case TraceEvent::ReceiveWaitEnd:
        if (auto it = wait.find(r.worker); it != wait.end()) {
          t.agent_wait_ns += r.t_ns - it->second;
          wait.erase(it);
        }
        break;
      default: break;
    }
  }
  return t;
}

}  // namespace enclave
