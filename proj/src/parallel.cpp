#include "esi/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <thread>

namespace esi {

namespace {

int resolve_thread_count() {
  if (const char* env = std::getenv("ROBUST_ESI_THREADS")) {
    int v = 0;
    const auto res = std::from_chars(env, env + std::strlen(env), v);
    if (res.ec == std::errc() && *res.ptr == '\0' && v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

}  // namespace

int thread_count() {
  static const int n = resolve_thread_count();
  return n;
}

bool parallel_enabled() {
#ifdef _OPENMP
  return thread_count() > 1;
#else
  return false;
#endif
}

}  // namespace esi
