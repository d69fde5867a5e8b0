// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "enclave/trace.hpp"

namespace enclave {

enum class SchedulerVariant { NativeTasks, FifoConsumers, PriorityConsumers };
const char* to_string(SchedulerVariant v);
SchedulerVariant parse_variant(const std::string& s);

struct SchedulerConfig {
  SchedulerVariant variant = SchedulerVariant::PriorityConsumers;
  int n_min = 8;
  int n_max = 8;
  int workers = 1;  // including the traversal agent
  std::chrono::milliseconds deadlock_timeout{30000};

  void validate() const;
};

enum class TaskClass { Skeleton, Enclave };

inline constexpr int kSkeletonPriority = 1;
inline constexpr int kEnclavePriority = 0;

class StpMarker;

struct TaskDescriptor {
  std::int64_t cell = 0;
  TaskClass kind = TaskClass::Enclave;
  int sweep = 0;
  int priority = kEnclavePriority;
  std::function<void()> run;
  StpMarker* marker = nullptr;  // set by Scheduler::spawn
};

TaskDescriptor make_task(std::int64_t cell, TaskClass kind, int sweep, std::function<void()> run);

/// Completion marker of one cell's predictor task. Complete at construction;
/// single writer (the executing thread), release/acquire visibility.
class StpMarker {
 public:
  enum State : int { Idle = 0, Queued = 1, Running = 2, Complete = 3 };

  bool complete() const { return state_.load(std::memory_order_acquire) == Complete; }
  State state() const { return static_cast<State>(state_.load(std::memory_order_acquire)); }
  /// Complete -> Idle. Throws SchedulingError while a task is queued or running.
  void reset();
  /// Idle -> Queued. Throws SchedulingError if the previous task is still pending.
  void mark_queued();
  void mark_running() { state_.store(Running, std::memory_order_release); }
  void mark_complete() { state_.store(Complete, std::memory_order_release); }

  std::exception_ptr error;
  std::int64_t cell = 0;

 private:
  std::atomic<int> state_{Complete};
};

/// Ready tasks: two FIFO classes (skeleton before enclave) or one plain FIFO.
///
/// With hold enabled the last queued enclave task is withheld from ordinary
/// dequeues; dequeues with `override_hold` still take it.
class ReadyQueue {
 public:
  explicit ReadyQueue(bool prioritized = true, Tracer* tracer = nullptr);

  void push(TaskDescriptor t);
  std::optional<TaskDescriptor> try_pop(bool override_hold = false);
  std::size_t size() const { return size_.load(std::memory_order_acquire); }
  std::size_t peak_size() const { return peak_.load(std::memory_order_relaxed); }
  bool prioritized() const { return prioritized_; }

  void set_hold(bool hold);
  /// Blocks until a task can be dequeued without override, or timeout/wake.
  void wait_poppable(std::chrono::microseconds timeout);
  void wake_all();

 private:
  bool poppable_locked() const;

  bool prioritized_;
  Tracer* tracer_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<TaskDescriptor> skeleton_;
  std::deque<TaskDescriptor> enclave_;  // the only deque in FIFO mode
  bool hold_ = false;
  std::atomic<std::size_t> size_{0};
  std::atomic<std::size_t> peak_{0};
};

/// Outcome of one consumer activation.
struct ConsumerStep {
  int observed = 0;  // counter value before the decrement
  bool forked = false;
  bool reenqueue = false;
  int processed = 0;
};

/// One activation of a consumer task. `spawn_consumer` creates a new
/// activation (used both for forking and for re-activation).
ConsumerStep run_consumer(ReadyQueue& queue, const SchedulerConfig& config,
                          std::atomic<int>& counter, const std::function<void()>& spawn_consumer,
                          const std::function<void(TaskDescriptor&)>& execute);

class ThreadPool {
 public:
  /// Worker ids passed to set_current_worker are id_base + 1 .. id_base + threads.
  ThreadPool(int threads, int id_base);
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  void submit(std::function<void()> job);
  /// Runs one pending job on the calling thread.
  bool try_run_one();
  int size() const { return static_cast<int>(threads_.size()); }
  std::size_t pending() const;
  void stop();

 private:
  void loop(int id);

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stop_ = false;
  std::vector<std::jthread> threads_;
};

struct WaitHooks {
  std::function<bool()> probe;  // receive at most one message; true if one arrived
  std::function<void()> idle;   // called when an iteration made no progress
};

struct SchedulerStats {
  std::int64_t agent_idle_ns = 0;
  std::int64_t agent_tasks = 0;
  int peak_consumers = 0;
  std::size_t peak_queue = 0;
};

/// Task runtime of one rank.
class Scheduler {
 public:
  Scheduler(SchedulerConfig config, Tracer* tracer, int rank);
  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  const SchedulerConfig& config() const { return config_; }
  ReadyQueue& queue() { return queue_; }

  /// Enqueues the predictor task of a cell whose marker has been reset.
  void spawn(TaskDescriptor task, StpMarker& marker);
  /// Executes up to n ready tasks on the calling thread.
  int process_up_to(int n, bool override_hold = false);
  /// Progression-on-wait: returns once the marker is complete.
  void wait_for(StpMarker& marker, const WaitHooks& hooks, bool override_hold);
  /// Runs until every spawned task has finished.
  void drain(const WaitHooks& hooks = {});
  void set_hold(bool hold) { queue_.set_hold(hold); }

  int live_consumers() const { return consumers_.load(); }
  std::int64_t outstanding() const { return outstanding_.load(); }
  SchedulerStats stats() const;
  void reset_stats();
  void shutdown();

 private:
  void execute(TaskDescriptor& task);
  void consumer_activation();
  void submit_consumer();
  void note_consumers(int value);

  SchedulerConfig config_;
  Tracer* tracer_;
  int rank_;
  ReadyQueue queue_;
  std::atomic<int> consumers_{0};
  std::atomic<std::int64_t> outstanding_{0};
  std::atomic<bool> shutdown_{false};
  std::atomic<int> peak_consumers_{0};
  std::atomic<std::int64_t> agent_idle_ns_{0};
  std::atomic<std::int64_t> agent_tasks_{0};
  ThreadPool pool_;
};

/// Rethrows a task failure with the cell id prepended, keeping its category.
[[noreturn]] void rethrow_task_error(std::exception_ptr error, std::int64_t cell);

}  // namespace enclave
