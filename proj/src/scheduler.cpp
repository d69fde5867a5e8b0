// SPDX-License-Identifier: Apache-2.0
#include "enclave/scheduler.hpp"

#include <algorithm>

#include "enclave/error.hpp"

namespace enclave {

const char* to_string(SchedulerVariant v) {
  switch (v) {
    case SchedulerVariant::NativeTasks: return "native";
    case SchedulerVariant::FifoConsumers: return "fifo";
    case SchedulerVariant::PriorityConsumers: return "priority";
  }
  return "?";
}

SchedulerVariant parse_variant(const std::string& s) {
  if (s == "native") return SchedulerVariant::NativeTasks;
  if (s == "fifo") return SchedulerVariant::FifoConsumers;
  if (s == "priority") return SchedulerVariant::PriorityConsumers;
  throw ConfigError("unknown scheduler '" + s + "'");
}

void SchedulerConfig::validate() const {
  if (n_min < 1 || n_max < 1) throw ConfigError("scheduler: N_min and N_max must be >= 1");
  if (workers < 1) throw ConfigError("scheduler: at least one worker required");
}

TaskDescriptor make_task(std::int64_t cell, TaskClass kind, int sweep, std::function<void()> run) {
  TaskDescriptor t;
  t.cell = cell;
  t.kind = kind;
  t.sweep = sweep;
  t.priority = kind == TaskClass::Skeleton ? kSkeletonPriority : kEnclavePriority;
  t.run = std::move(run);
  return t;
}

void StpMarker::reset() {
  const State s = state();
  if (s == Queued || s == Running)
    throw SchedulingError("marker of cell " + std::to_string(cell) + " reset while its task is pending");
  error = nullptr;
  state_.store(Idle, std::memory_order_release);
}

void StpMarker::mark_queued() {
  int expected = Idle;
  if (!state_.compare_exchange_strong(expected, Queued, std::memory_order_acq_rel))
    throw SchedulingError("spawn for cell " + std::to_string(cell) +
                          (expected == Complete ? " without marker reset" : " while its task is pending"));
}

// --- ready queue -----------------------------------------------------------

ReadyQueue::ReadyQueue(bool prioritized, Tracer* tracer) : prioritized_(prioritized), tracer_(tracer) {}

void ReadyQueue::push(TaskDescriptor t) {
  {
    std::lock_guard lock(mutex_);
    if (tracer_)
      tracer_->record(t.kind == TaskClass::Skeleton ? TraceEvent::SpawnSkeleton : TraceEvent::SpawnEnclave,
                      t.cell, t.sweep);
    if (prioritized_ && t.priority > kEnclavePriority)
      skeleton_.push_back(std::move(t));
    else
      enclave_.push_back(std::move(t));
    const std::size_t n = size_.fetch_add(1, std::memory_order_acq_rel) + 1;
    std::size_t peak = peak_.load(std::memory_order_relaxed);
    while (n > peak && !peak_.compare_exchange_weak(peak, n)) {
    }
  }
  cv_.notify_one();
}

bool ReadyQueue::poppable_locked() const {
  if (!skeleton_.empty()) return true;
  if (enclave_.empty()) return false;
  return !(prioritized_ && hold_ && enclave_.size() == 1);
}

std::optional<TaskDescriptor> ReadyQueue::try_pop(bool override_hold) {
  std::lock_guard lock(mutex_);
  std::deque<TaskDescriptor>* from = nullptr;
  if (!skeleton_.empty())
    from = &skeleton_;
  else if (!enclave_.empty() && (override_hold || !(prioritized_ && hold_ && enclave_.size() == 1)))
    from = &enclave_;
  if (!from) return std::nullopt;
  TaskDescriptor t = std::move(from->front());
  from->pop_front();
  size_.fetch_sub(1, std::memory_order_acq_rel);
  if (tracer_)
    tracer_->record(t.kind == TaskClass::Skeleton ? TraceEvent::StartSkeleton : TraceEvent::StartEnclave,
                    t.cell, t.sweep);
  return t;
}

void ReadyQueue::set_hold(bool hold) {
  {
    std::lock_guard lock(mutex_);
    hold_ = hold;
  }
  cv_.notify_all();
}

void ReadyQueue::wait_poppable(std::chrono::microseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [&] { return poppable_locked(); });
}

void ReadyQueue::wake_all() { cv_.notify_all(); }

// --- consumer --------------------------------------------------------------

ConsumerStep run_consumer(ReadyQueue& queue, const SchedulerConfig& config,
                          std::atomic<int>& counter, const std::function<void()>& spawn_consumer,
                          const std::function<void(TaskDescriptor&)>& execute) {
  ConsumerStep step;
  step.observed = counter.fetch_sub(1, std::memory_order_acq_rel);
  const double per_consumer = static_cast<double>(queue.size()) / config.n_min;
  if (step.observed < per_consumer) {
    counter.fetch_add(1, std::memory_order_acq_rel);
    spawn_consumer();
    step.forked = true;
    step.reenqueue = true;
  } else if (step.observed <= 1 || queue.size() > 0) {
    step.reenqueue = true;
  }
  while (step.processed < config.n_max) {
    auto t = queue.try_pop();
    if (!t) break;
    execute(*t);
    ++step.processed;
  }
  if (step.reenqueue) {
    counter.fetch_add(1, std::memory_order_acq_rel);
    spawn_consumer();
  }
  return step;
}

// --- thread pool -----------------------------------------------------------

ThreadPool::ThreadPool(int threads, int id_base) {
  threads_.reserve(std::max(threads, 0));
  for (int i = 0; i < threads; ++i) threads_.emplace_back([this, id = id_base + i + 1] { loop(id); });
}

ThreadPool::~ThreadPool() { stop(); }

void ThreadPool::submit(std::function<void()> job) {
  {
    std::lock_guard lock(mutex_);
    jobs_.push_back(std::move(job));
  }
  cv_.notify_one();
}

bool ThreadPool::try_run_one() {
  std::function<void()> job;
  {
    std::lock_guard lock(mutex_);
    if (jobs_.empty()) return false;
    job = std::move(jobs_.front());
    jobs_.pop_front();
  }
  job();
  return true;
}

std::size_t ThreadPool::pending() const {
  std::lock_guard lock(mutex_);
  return jobs_.size();
}

void ThreadPool::stop() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  threads_.clear();
}

void ThreadPool::loop(int id) {
  set_current_worker(id);
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stop_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();
  }
}

// --- scheduler -------------------------------------------------------------

Scheduler::Scheduler(SchedulerConfig config, Tracer* tracer, int rank)
    : config_(config),
      tracer_(tracer),
      rank_(rank),
      queue_(config.variant == SchedulerVariant::PriorityConsumers, tracer),
      pool_((config.validate(), config.workers - 1), rank * 1000) {}

Scheduler::~Scheduler() { shutdown(); }

void Scheduler::shutdown() {
  shutdown_.store(true);
  queue_.wake_all();
  pool_.stop();
}

void Scheduler::note_consumers(int value) {
  int peak = peak_consumers_.load(std::memory_order_relaxed);
  while (value > peak && !peak_consumers_.compare_exchange_weak(peak, value)) {
  }
}

void Scheduler::submit_consumer() {
  pool_.submit([this] { consumer_activation(); });
}

void Scheduler::consumer_activation() {
  if (!shutdown_.load()) queue_.wait_poppable(std::chrono::microseconds(1000));
  if (shutdown_.load()) {
    consumers_.fetch_sub(1);
    return;
  }
  if (tracer_) tracer_->record(TraceEvent::ConsumerBegin, 0, 0);
  const ConsumerStep step = run_consumer(
      queue_, config_, consumers_,
      [this] {
        note_consumers(consumers_.load());
        submit_consumer();
      },
      [this](TaskDescriptor& t) { execute(t); });
  if (tracer_) {
    if (step.forked) tracer_->record(TraceEvent::ConsumerFork, step.observed, 0);
    tracer_->record(TraceEvent::ConsumerEnd, step.processed, 0);
  }
}

void Scheduler::spawn(TaskDescriptor task, StpMarker& marker) {
  marker.cell = task.cell;
  marker.mark_queued();
  task.marker = &marker;
  outstanding_.fetch_add(1);
  if (config_.variant == SchedulerVariant::NativeTasks) {
    if (tracer_)
      tracer_->record(task.kind == TaskClass::Skeleton ? TraceEvent::SpawnSkeleton : TraceEvent::SpawnEnclave,
                      task.cell, task.sweep);
    pool_.submit([this, t = std::move(task)]() mutable {
      if (tracer_)
        tracer_->record(t.kind == TaskClass::Skeleton ? TraceEvent::StartSkeleton : TraceEvent::StartEnclave,
                        t.cell, t.sweep);
      execute(t);
    });
    return;
  }
  queue_.push(std::move(task));
  if (pool_.size() == 0) return;
  int expected = 0;
  if (consumers_.compare_exchange_strong(expected, 1)) {
    note_consumers(1);
    submit_consumer();
  }
}

void Scheduler::execute(TaskDescriptor& t) {
  StpMarker* marker = t.marker;
  marker->mark_running();
  try {
    t.run();
  } catch (...) {
    marker->error = std::current_exception();
  }
  if (tracer_) tracer_->record(TraceEvent::Finish, t.cell, t.sweep);
  marker->mark_complete();
  outstanding_.fetch_sub(1);
}

int Scheduler::process_up_to(int n, bool override_hold) {
  int done = 0;
  if (config_.variant == SchedulerVariant::NativeTasks) {
    while (done < n && pool_.try_run_one()) ++done;
  } else {
    while (done < n) {
      auto t = queue_.try_pop(override_hold);
      if (!t) break;
      execute(*t);
      ++done;
    }
  }
  agent_tasks_.fetch_add(done);
  return done;
}

void Scheduler::wait_for(StpMarker& marker, const WaitHooks& hooks, bool override_hold) {
  if (!marker.complete()) {
    if (tracer_) tracer_->record(TraceEvent::WaitBegin, marker.cell, 0);
    auto last_progress = std::chrono::steady_clock::now();
    while (!marker.complete()) {
      const bool received = hooks.probe ? hooks.probe() : false;
      const int done = process_up_to(config_.n_max, override_hold);
      const auto now = std::chrono::steady_clock::now();
      if (received || done > 0) {
        last_progress = now;
        continue;
      }
      if (marker.complete()) break;
      const StpMarker::State s = marker.state();
      if (s != StpMarker::Running && now - last_progress > config_.deadlock_timeout)
        throw SchedulingError("deadlock: rank " + std::to_string(rank_) + " waits for cell " +
                              std::to_string(marker.cell) + " in state " + std::to_string(s) +
                              " with no progress");
      if (hooks.idle)
        hooks.idle();
      else
        std::this_thread::yield();
      agent_idle_ns_.fetch_add(
          std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - now)
              .count());
    }
    if (tracer_) tracer_->record(TraceEvent::WaitEnd, marker.cell, 0);
  }
  if (marker.error) rethrow_task_error(marker.error, marker.cell);
}

void Scheduler::drain(const WaitHooks& hooks) {
  auto last_progress = std::chrono::steady_clock::now();
  while (outstanding_.load() > 0) {
    const bool received = hooks.probe ? hooks.probe() : false;
    const int done = process_up_to(config_.n_max, true);
    const auto now = std::chrono::steady_clock::now();
    if (received || done > 0) {
      last_progress = now;
      continue;
    }
    if (now - last_progress > config_.deadlock_timeout)
      throw SchedulingError("deadlock: rank " + std::to_string(rank_) + " cannot drain " +
                            std::to_string(outstanding_.load()) + " tasks");
    if (hooks.idle)
      hooks.idle();
    else
      std::this_thread::yield();
  }
}

SchedulerStats Scheduler::stats() const {
  SchedulerStats s;
  s.agent_idle_ns = agent_idle_ns_.load();
  s.agent_tasks = agent_tasks_.load();
  s.peak_consumers = peak_consumers_.load();
  s.peak_queue = queue_.peak_size();
  return s;
}

void Scheduler::reset_stats() {
  agent_idle_ns_.store(0);
  agent_tasks_.store(0);
}

void rethrow_task_error(std::exception_ptr error, std::int64_t cell) {
  const std::string prefix = "cell " + std::to_string(cell) + ": ";
  try {
    std::rethrow_exception(error);
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const SchedulingError& e) {
    throw SchedulingError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace enclave
