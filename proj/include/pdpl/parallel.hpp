/*
 Copyright 2026 The pdpl authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef PDPL_PARALLEL_HPP_
#define PDPL_PARALLEL_HPP_

#include <atomic>
#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pdpl::par {

// All bulk loops in this project (dataset generation, Monte Carlo sweeps,
// full-batch training reductions) go through these helpers. Work item i only
// ever depends on index i, so parallel and serial execution produce identical
// results slot-by-slot. Reductions are chunked into a fixed number of blocks
// and the block partials are combined in block order, which makes the summed
// result independent of the thread count as well.

/// True when the OpenMP backend is compiled in and enabled at runtime.
bool parallel_enabled();

/// Force the serial reference path (used by tests and the kernel benchmark).
void set_serial_override(bool serial_only);

int max_threads();

/// Serial reference kernel: body(i) for i in [0, n).
template <typename Body>
void serial_for(std::size_t n, Body&& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

/// Parallel kernel. Falls back to the serial reference when OpenMP is
/// unavailable or the serial override is set. The first exception thrown by
/// any work item is rethrown after the region joins (exceptions must not
/// cross the OpenMP boundary).
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
#ifdef _OPENMP
  if (parallel_enabled() && n > 1) {
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
      if (failed.load(std::memory_order_relaxed)) continue;
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(pdpl_parallel_error)
        {
          if (!failed.exchange(true)) first_error = std::current_exception();
        }
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return;
  }
#endif
  serial_for(n, body);
}

inline constexpr std::size_t kReduceBlocks = 256;

/// Deterministic chunked reduction with an explicit combiner: blocks are
/// reduced independently and the block partials are combined serially in
/// block order, so the result does not depend on the thread count.
template <typename Acc, typename Term, typename Combine>
Acc chunked_reduce(std::size_t n, Term&& term, Acc init, Combine&& combine) {
  if (n == 0) return init;
  const std::size_t nblocks = n < kReduceBlocks ? n : kReduceBlocks;
  const std::size_t chunk = (n + nblocks - 1) / nblocks;
  std::vector<Acc> partial(nblocks, init);
  parallel_for(nblocks, [&](std::size_t b) {
    const std::size_t lo = b * chunk;
    const std::size_t hi = lo + chunk < n ? lo + chunk : n;
    Acc acc = init;
    for (std::size_t i = lo; i < hi; ++i) acc = combine(acc, term(i));
    partial[b] = acc;
  });
  Acc total = init;
  for (std::size_t b = 0; b < nblocks; ++b) total = combine(total, partial[b]);
  return total;
}

/// Sum reduction: acc_b = sum over block b of term(i), block partials summed
/// in block order.
template <typename Acc, typename Term>
Acc chunked_reduce(std::size_t n, Term&& term, Acc init) {
  if (n == 0) return init;
  const std::size_t nblocks = n < kReduceBlocks ? n : kReduceBlocks;
  const std::size_t chunk = (n + nblocks - 1) / nblocks;
  std::vector<Acc> partial(nblocks, init);
  parallel_for(nblocks, [&](std::size_t b) {
    const std::size_t lo = b * chunk;
    const std::size_t hi = lo + chunk < n ? lo + chunk : n;
    Acc acc = init;
    for (std::size_t i = lo; i < hi; ++i) acc += term(i);
    partial[b] = acc;
  });
  Acc total = init;
  for (std::size_t b = 0; b < nblocks; ++b) total += partial[b];
  return total;
}

}  // namespace pdpl::par

#endif  // PDPL_PARALLEL_HPP_
