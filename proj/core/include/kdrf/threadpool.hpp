#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace kdrf {

// Fixed-size pool running an indexed batch of tasks. Tasks write only to
// caller-owned disjoint outputs, so results never depend on which worker
// executed which index.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) {
    const int n = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    workers_.reserve(static_cast<std::size_t>(std::max(1, n)));
    for (int i = 0; i < std::max(1, n); ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()); }

  // Runs fn(0), ..., fn(count-1) across the pool; returns when all finish.
  // Exceptions propagate (first one wins).
  void run(int count, const std::function<void(int)>& fn) {
    if (count <= 0) return;
    std::unique_lock lock(mu_);
    fn_ = &fn;
    next_ = 0;
    pending_ = count;
    total_ = count;
    error_ = nullptr;
    cv_.notify_all();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    fn_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void worker_loop() {
    std::unique_lock lock(mu_);
    for (;;) {
      cv_.wait(lock, [this] { return stop_ || (fn_ != nullptr && next_ < total_); });
      if (stop_) return;
      while (fn_ != nullptr && next_ < total_) {
        const int idx = next_++;
        const auto* fn = fn_;
        lock.unlock();
        try {
          (*fn)(idx);
        } catch (...) {
          lock.lock();
          if (!error_) error_ = std::current_exception();
          if (--pending_ == 0) done_cv_.notify_all();
          continue;
        }
        lock.lock();
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  int next_ = 0, pending_ = 0, total_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
};

}  // namespace kdrf
