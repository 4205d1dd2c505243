#include "ffsim/thread_pool.hpp"

#include <algorithm>
#include <cstdint>

namespace ffsim {

namespace {

std::pair<int, int> chunk_range(int n, int chunks, int k) {
  const int base = n / chunks;
  const int extra = n % chunks;
  const int begin = k * base + std::min(k, extra);
  return {begin, begin + base + (k < extra ? 1 : 0)};
}

}  // namespace

int hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

ThreadPool::ThreadPool(int threads) {
  const int extra = std::max(0, threads - 1);
  errors_.resize(static_cast<std::size_t>(extra) + 1);
  workers_.reserve(static_cast<std::size_t>(extra));
  for (int i = 0; i < extra; ++i) workers_.emplace_back([this, i] { worker_loop(i + 1); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop(int index) {
  std::uint64_t seen = 0;
  while (true) {
    const std::function<void(int, int)>* job = nullptr;
    int n = 0;
    int chunks = 0;
    {
      std::unique_lock lock(mutex_);
      start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      job = job_;
      n = n_;
      chunks = chunks_;
    }
    if (index < chunks) {
      const auto [b, e] = chunk_range(n, chunks, index);
      try {
        if (b < e) (*job)(b, e);
      } catch (...) {
        errors_[static_cast<std::size_t>(index)] = std::current_exception();
      }
    }
    {
      std::lock_guard lock(mutex_);
      --pending_;
    }
    done_cv_.notify_one();
  }
}

void ThreadPool::parallel_for(int n, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  const int chunks = std::min(size(), n);
  if (chunks == 1) {
    fn(0, n);
    return;
  }
  std::fill(errors_.begin(), errors_.end(), nullptr);
  {
    std::lock_guard lock(mutex_);
    job_ = &fn;
    n_ = n;
    chunks_ = chunks;
    pending_ = static_cast<int>(workers_.size());
    ++generation_;
  }
  start_cv_.notify_all();
  const auto [b, e] = chunk_range(n, chunks, 0);
  try {
    fn(b, e);
  } catch (...) {
    errors_[0] = std::current_exception();
  }
  {
    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    job_ = nullptr;
  }
  for (const auto& err : errors_) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace ffsim
