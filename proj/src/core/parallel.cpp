#include "cmunet/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace cmunet {

int configure_threads_from_env() {
  if (const char* env = std::getenv("CMUNET_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
      // ignore malformed values and keep the OpenMP default
    }
  }
  return omp_get_max_threads();
}

void set_num_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace cmunet
