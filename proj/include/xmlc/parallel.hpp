// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>

namespace xmlc {

/// Selects the OpenMP kernel or the serial reference loop. Both produce
/// bitwise-identical results: every index writes only its own output slot.
enum class Execution { serial, parallel };

/// Runs fn(i) for i in [0, n). The first exception thrown by any iteration is
/// rethrown on the calling thread once the loop has finished.
template <typename Fn>
void for_each_index(std::size_t n, Fn &&fn, Execution exec = Execution::parallel) {
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(xmlc_for_each_index)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

int max_threads();
/// Caps the OpenMP team size; n <= 0 leaves the runtime default.
void set_max_threads(int n);

}  // namespace xmlc
