#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace smallcap {

inline unsigned& default_workers_ref() {
  static unsigned w = 1;
  return w;
}
inline unsigned default_workers() { return default_workers_ref(); }
inline void set_default_workers(unsigned w) { default_workers_ref() = std::max(1u, w); }

// Runs fn(block) for block in [0, n_blocks) and returns results indexed by block.
// Callers reduce the vector in index order, so the outcome never depends on
// how many workers ran.
template <class R, class F>
std::vector<R> parallel_blocks(std::size_t n_blocks, F&& fn, unsigned workers = default_workers()) {
  std::vector<R> out(n_blocks);
  unsigned nt = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n_blocks));
  if (nt <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) out[b] = fn(b);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto body = [&] {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      try {
        out[b] = fn(b);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!err) err = std::current_exception();
        next = n_blocks;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < nt; ++i) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace smallcap
