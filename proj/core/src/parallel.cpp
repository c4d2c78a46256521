#include "rmfg/parallel.hpp"

#include <algorithm>

#ifdef RMFG_HAVE_OPENMP
#include <omp.h>
#endif

namespace rmfg {
namespace {
int g_threads = 0;
}

void set_thread_count(int threads) {
  g_threads = std::max(threads, 0);
#ifdef RMFG_HAVE_OPENMP
  if (g_threads > 0) omp_set_num_threads(g_threads);
#endif
}

int thread_count() {
#ifdef RMFG_HAVE_OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  std::vector<std::exception_ptr> errors;
  bool failed = false;
#ifdef RMFG_HAVE_OPENMP
  if (thread_count() > 1 && n > 1) {
    errors.resize(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
#pragma omp atomic write
        failed = true;
      }
    }
    if (failed) {
      for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    return;
  }
#endif
  (void)failed;
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace rmfg
