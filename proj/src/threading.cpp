#include "depthformer/threading.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace df {

namespace {

int g_max_threads = 0;  // 0 = not set explicitly

int resolve_threads() {
  if (g_max_threads > 0) return g_max_threads;
  if (const char* env = std::getenv("DEPTHFORMER_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Persistent pool with fixed chunk assignment: worker i always runs chunk i+1
// of the current job, the calling thread runs chunk 0. run() does not return
// until every participating worker finished, so the job closure stays alive
// for the duration of each call into it.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i)
      threads_.emplace_back([this, i] { worker_loop(i); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(int nchunks, const std::function<void(int)>& chunk_fn) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      chunk_fn_ = &chunk_fn;
      nchunks_ = nchunks;
      pending_ = nchunks - 1;
      ++job_id_;
    }
    if (nchunks > 1) cv_.notify_all();
    chunk_fn(0);
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    chunk_fn_ = nullptr;
  }

  int size() const { return static_cast<int>(threads_.size()); }

 private:
  void worker_loop(int me) {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* fn = nullptr;
      bool participate = false;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (job_id_ != seen && chunk_fn_ != nullptr); });
        if (stop_) return;
        seen = job_id_;
        fn = chunk_fn_;
        participate = (me + 1) < nchunks_;
      }
      if (!participate) continue;
      (*fn)(me + 1);
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  bool stop_ = false;
  uint64_t job_id_ = 0;
  const std::function<void(int)>* chunk_fn_ = nullptr;
  int nchunks_ = 0;
  int pending_ = 0;
};

Pool& pool() {
  static Pool p(std::max(0, resolve_threads() - 1));
  return p;
}

}  // namespace

int max_threads() { return resolve_threads(); }

void set_max_threads(int n) { g_max_threads = n; }

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  grain = std::max<int64_t>(1, grain);
  // The pool is sized once, but the thread cap is honored per call so it can
  // be lowered at any time.
  int64_t max_chunks = std::min<int64_t>(
      {static_cast<int64_t>(pool().size()) + 1, static_cast<int64_t>(resolve_threads()),
       (n + grain - 1) / grain});
  if (max_chunks <= 1) {
    fn(0, n);
    return;
  }
  const int64_t chunk = (n + max_chunks - 1) / max_chunks;
  std::function<void(int)> chunk_fn = [&](int c) {
    int64_t lo = c * chunk;
    int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo < hi) fn(lo, hi);
  };
  pool().run(static_cast<int>(max_chunks), chunk_fn);
}

}  // namespace df
