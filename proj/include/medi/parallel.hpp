#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <span>
#include <vector>

#include "medi/kernels.hpp"

namespace medi {

/// Sums per-item contributions into a `width`-sized buffer. Items are grouped
/// into fixed chunks, each chunk accumulates serially, and chunk buffers are
/// added in chunk order, so the result does not depend on the thread count or
/// on the execution mode. `fn(item, acc)` adds into acc and returns a scalar
/// that is reduced the same way.
template <class F>
double chunked_accumulate(std::size_t items, std::size_t width, std::size_t chunk,
                          kernels::Execution exec, std::span<double> out, F&& fn) {
  if (chunk == 0) chunk = 1;
  const std::size_t chunks = (items + chunk - 1) / chunk;
  std::vector<double> buffers(chunks * width, 0.0);
  std::vector<double> scalars(chunks, 0.0);
  std::vector<std::exception_ptr> errors(chunks);
  const auto body = [&](std::size_t c) {
    try {
      std::span<double> acc(buffers.data() + c * width, width);
      const std::size_t end = std::min(items, (c + 1) * chunk);
      for (std::size_t i = c * chunk; i < end; ++i) scalars[c] += fn(i, acc);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (exec == kernels::Execution::parallel) {
    const auto n = static_cast<long>(chunks);
#pragma omp parallel for schedule(dynamic, 1)
    for (long c = 0; c < n; ++c) body(static_cast<std::size_t>(c));
  } else {
    for (std::size_t c = 0; c < chunks; ++c) body(c);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += scalars[c];
    for (std::size_t i = 0; i < width; ++i) out[i] += buffers[c * width + i];
  }
  return total;
}

/// Runs fn(i) for i in [0, count); exceptions are rethrown in index order.
template <class F>
void parallel_for(std::size_t count, kernels::Execution exec, F&& fn) {
  std::vector<std::exception_ptr> errors(count);
  if (exec == kernels::Execution::parallel) {
    const auto n = static_cast<long>(count);
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace medi
