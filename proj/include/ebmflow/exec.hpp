#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ebmflow::exec {

// Chains are processed in fixed-size blocks. The block partition never
// depends on the thread count, so results are bit-identical whether a kernel
// runs serially or under OpenMP.
inline constexpr int kChainBlock = 64;

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int num_blocks(int n_items, int block = kChainBlock) {
  return (n_items + block - 1) / block;
}

// Runs fn(begin, count, block_index) over every block. `parallel` only
// changes scheduling, never the work partition.
template <typename Fn>
void for_blocks(int n_items, bool parallel, Fn&& fn, int block = kChainBlock) {
  const int nb = num_blocks(n_items, block);
  if (parallel && nb > 1) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < nb; ++b) {
      const int begin = b * block;
      fn(begin, std::min(block, n_items - begin), b);
    }
  } else {
    for (int b = 0; b < nb; ++b) {
      const int begin = b * block;
      fn(begin, std::min(block, n_items - begin), b);
    }
  }
}

}  // namespace ebmflow::exec
