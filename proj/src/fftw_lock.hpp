#pragma once

#include <mutex>

namespace msoma::detail {

// FFTW planning is not thread safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex mu;
  return mu;
}

}  // namespace msoma::detail
