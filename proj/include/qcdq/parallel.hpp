#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qcdq {

/// Fixed partition of [0, n) into blocks of `block` items. Block boundaries do
/// not depend on the thread count, so per-block partial results reduced in
/// block order are bit-identical for any `threads`.
struct BlockPlan {
  std::size_t n = 0;
  std::size_t block = 1024;

  std::size_t count() const { return block == 0 ? 0 : (n + block - 1) / block; }
  std::size_t begin(std::size_t b) const { return b * block; }
  std::size_t end(std::size_t b) const { return std::min(n, (b + 1) * block); }
};

/// Runs fn(block_index, begin, end) for every block of `plan` on up to
/// `threads` workers. The first exception thrown by any block is rethrown.
template <class Fn>
void for_each_block(const BlockPlan& plan, unsigned threads, Fn&& fn) {
  const std::size_t nb = plan.count();
  if (nb == 0) return;
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(nb)));
  if (threads == 1) {
    for (std::size_t b = 0; b < nb; ++b) fn(b, plan.begin(b), plan.end(b));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= nb) return;
      try {
        fn(b, plan.begin(b), plan.end(b));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(nb);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace qcdq
