#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

namespace nvarray {

using Rng = std::mt19937_64;

/// Stage identifiers mixed into derived seeds so that independent parts of a
/// run never share a random stream.
enum class Stage : std::uint64_t {
  Nitrogen = 1,
  Vacancy = 2,
  Rewrite = 3,
  Dispersion = 4,
  Imaging = 5,
  Photon = 6,
  Coherence = 7,
  Bootstrap = 8,
  Survey = 9,
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Counter-based seed derivation: the result depends only on the arguments,
/// never on how many streams were derived before.
std::uint64_t derive_seed(std::uint64_t master, Stage stage, std::uint64_t index,
                          std::uint64_t sub = 0);

inline Rng make_stream(std::uint64_t master, Stage stage, std::uint64_t index,
                       std::uint64_t sub = 0) {
  return Rng(derive_seed(master, stage, index, sub));
}

/// Runs body(i) for i in [0, n) on up to `threads` workers. Callers write
/// results into preallocated slots indexed by i, so the outcome does not
/// depend on the thread count.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace nvarray
