#include "fsl/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fsl::parallel {

namespace {
int g_threads = 0;  // 0 = auto
}

void set_threads(int n) {
    g_threads = n < 0 ? 0 : n;
#ifdef _OPENMP
    omp_set_num_threads(g_threads == 0 ? omp_get_num_procs() : g_threads);
#endif
}

int threads() {
#ifdef _OPENMP
    return g_threads == 0 ? omp_get_num_procs() : g_threads;
#else
    return 1;
#endif
}

bool active() {
#ifdef _OPENMP
    return threads() > 1 && !omp_in_parallel();
#else
    return false;
#endif
}

}  // namespace fsl::parallel
