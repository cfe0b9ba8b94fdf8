#pragma once

#include <cstdint>

namespace cmunet {

// Applies CMUNET_THREADS (if set) as the OpenMP thread cap. Returns the cap.
int configure_threads_from_env();
void set_num_threads(int n);
int num_threads();

// Work size below which kernels stay single-threaded.
inline constexpr std::int64_t kParallelGrain = 1 << 14;

}  // namespace cmunet
