#pragma once

// Data-parallel loop helpers. Every kernel takes an Exec policy: `serial` is the
// reference path kept for testing, `parallel` runs the same body under OpenMP.
// Reductions are always done serially over per-index results, so both policies
// produce bit-identical output.

#include <cstddef>
#include <exception>
#include <numeric>
#include <vector>

#include <omp.h>

namespace aprecond {

enum class Exec { serial, parallel };

/// Runs body(i) for i in [0, n). An exception thrown by any index is rethrown
/// after the loop; with several failures the lowest index wins, so both
/// policies report the same error.
template <class Body>
void for_each_index(std::size_t n, Exec exec, Body&& body) {
  if (exec == Exec::parallel && n > 1) {
    std::vector<std::exception_ptr> errors(n);
    const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < count; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
}

/// Evaluates body(i) for every index and returns the results in index order.
template <class T, class Body>
std::vector<T> map_indexed(std::size_t n, Exec exec, Body&& body) {
  std::vector<T> out(n);
  for_each_index(n, exec, [&](std::size_t i) { out[i] = body(i); });
  return out;
}

/// Fixed-order sum.
inline double ordered_sum(const std::vector<double>& values) {
  return std::accumulate(values.begin(), values.end(), 0.0);
}

inline int max_threads() { return omp_get_max_threads(); }

}  // namespace aprecond
