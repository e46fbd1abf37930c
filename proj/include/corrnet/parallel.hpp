#pragma once

// Thread-count control for the OpenMP kernels.
//
// Every parallel loop in this library assigns each output element to exactly
// one thread and keeps the per-element accumulation in ascending index order,
// so results are bit-identical for any thread count, including 1.

#ifdef _OPENMP
#include <omp.h>
#endif

namespace corrnet {

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace corrnet
