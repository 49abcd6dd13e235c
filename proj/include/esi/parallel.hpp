#pragma once

namespace esi {

// worker count for OpenMP regions: ROBUST_ESI_THREADS if set to a positive
// integer, otherwise the hardware thread count (at least 1). The value is
// resolved once per process.
int thread_count();

// true when OpenMP is compiled in and thread_count() > 1
bool parallel_enabled();

}  // namespace esi
