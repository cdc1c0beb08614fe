#pragma once

#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace metaopt {

// Fixed-size pool; tasks are void() closures. parallel_for blocks until all
// tasks finish and rethrows the first captured exception.
class ThreadPool {
 public:
  explicit ThreadPool(int n) {
    if (n <= 0) throw std::invalid_argument("ThreadPool: need at least one worker");
    for (int i = 0; i < n; ++i)
      workers_.emplace_back([this] {
        for (;;) {
          std::function<void()> task;
          {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
            if (stop_ && queue_.empty()) return;
            task = std::move(queue_.front());
            queue_.pop_front();
          }
          task();
        }
      });
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

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mu_);
      if (stop_) throw std::runtime_error("ThreadPool: submit after shutdown");
      queue_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

  void parallel_for(int n_tasks, const std::function<void(int)>& fn) {
    if (n_tasks <= 0) return;
    std::mutex done_mu;
    std::condition_variable done_cv;
    int remaining = n_tasks;
    std::exception_ptr first_error;
    for (int i = 0; i < n_tasks; ++i)
      submit([&, i] {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(done_mu);
          if (!first_error) first_error = std::current_exception();
        }
        {
          std::lock_guard lock(done_mu);
          --remaining;
        }
        done_cv.notify_one();
      });
    std::unique_lock lock(done_mu);
    done_cv.wait(lock, [&] { return remaining == 0; });
    if (first_error) std::rethrow_exception(first_error);
  }

 private:
  std::vector<std::thread> workers_;
  std::deque<std::function<void()>> queue_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
};

}  // namespace metaopt
