#pragma once

#include <cstddef>

namespace fsl::parallel {

// 0 = use all hardware threads. Applies process-wide.
void set_threads(int n);
int threads();

// True when the OpenMP paths should run (more than one thread configured and
// we are not already inside a parallel region).
bool active();

}  // namespace fsl::parallel
