#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

// Data-parallel loops over points. Reductions are accumulated per fixed-size
// block and the block partials combined in index order, so results are
// bit-identical for any thread count.

namespace mixfit::par {

inline constexpr std::ptrdiff_t kBlock = 2048;

inline std::ptrdiff_t block_count(std::ptrdiff_t n) { return (n + kBlock - 1) / kBlock; }

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

// body(block_index, begin, end); blocks run in parallel
template <class F>
void for_blocks(std::ptrdiff_t n, F&& body) {
    const std::ptrdiff_t nb = block_count(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t b = 0; b < nb; ++b) {
        const std::ptrdiff_t begin = b * kBlock;
        const std::ptrdiff_t end = begin + kBlock < n ? begin + kBlock : n;
        body(b, begin, end);
    }
}

}  // namespace mixfit::par
