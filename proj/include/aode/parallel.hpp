#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace aode {

namespace detail {
inline std::atomic<std::size_t>& thread_cap() {
  static std::atomic<std::size_t> cap{0};
  return cap;
}
}  // namespace detail

// Caps the number of worker threads used by per-particle loops. Zero means
// "use AODE_THREADS, else hardware concurrency".
inline void set_max_threads(std::size_t n) { detail::thread_cap() = n; }

inline std::size_t max_threads() {
  std::size_t cap = detail::thread_cap();
  if (cap > 0) return cap;
  if (const char* env = std::getenv("AODE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Particle columns are processed in chunks whose boundaries never depend on
// the thread count, so chunk results combined in chunk order are reproducible.
inline constexpr std::size_t kParticleChunk = 256;

struct ChunkRange {
  std::size_t begin = 0;
  std::size_t size = 0;
};

inline std::vector<ChunkRange> particle_chunks(std::size_t n, std::size_t chunk = kParticleChunk) {
  std::vector<ChunkRange> out;
  for (std::size_t b = 0; b < n; b += chunk) out.push_back({b, std::min(chunk, n - b)});
  if (out.empty()) out.push_back({0, 0});
  return out;
}

// Runs fn(i) for i in [0, n) on up to max_threads() workers. Exceptions
// from workers are rethrown on the caller's thread (first one wins).
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(n, max_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Pairwise tree reduction in index order: ((0+1)+(2+3))+...
template <typename T, typename Add>
T pairwise_reduce(std::vector<T> parts, Add add) {
  while (parts.size() > 1) {
    std::vector<T> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(add(std::move(parts[i]), parts[i + 1]));
    if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

}  // namespace aode
