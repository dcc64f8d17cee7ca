#pragma once

#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace objbridge {

// Every parallel kernel in this project has a serial twin used as the
// reference in tests and benchmarks. Work items are independent (split rng
// streams, indexed output slots) so both paths produce identical bytes.
enum class Parallelism { serial, openmp };

template <typename Fn>
void parallel_for(int n, Parallelism par, Fn&& fn) {
#ifdef _OPENMP
    if (par == Parallelism::openmp) {
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
#else
    (void)par;
#endif
    for (int i = 0; i < n; ++i) {
        fn(i);
    }
}

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

}  // namespace objbridge
