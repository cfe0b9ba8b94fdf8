#pragma once

// Serial loop implementations kept as test oracles and benchmark baselines.
// They share no code with the OpenMP kernels.

#include <cstdint>

#include "cmunet/kernels.hpp"

namespace cmunet::reference {

template <class T>
void matmul(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c);

// Direct six-nested-loop cross-correlation (plus batch and group loops).
template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

}  // namespace cmunet::reference
