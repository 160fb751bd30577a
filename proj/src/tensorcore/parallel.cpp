#include "adasample/parallel.hpp"

#include <cstdlib>

namespace adasample {

namespace {
int g_threads = 0;
}

int thread_count() {
  if (g_threads <= 0) {
    int n = 0;
    if (const char* env = std::getenv("ADASAMPLE_THREADS")) n = std::atoi(env);
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    g_threads = n > 0 ? n : 1;
  }
  return g_threads;
}

void set_thread_count(int n) { g_threads = n > 0 ? n : 0; }

}  // namespace adasample
