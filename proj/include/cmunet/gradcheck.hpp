#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cmunet/nn.hpp"
#include "cmunet/tensor.hpp"

namespace cmunet {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

// |a - n| / max(|a|, |n|, floor). The floor keeps exactly-zero gradients from
// dividing finite-difference round-off by zero.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Rounding in a deep real64 forward pass moves the loss by a few dozen ulps,
// so a central difference cannot resolve gradient differences below
// kFdRoundoffUlps * eps * max(1, |loss|) / h.
inline constexpr double kFdRoundoffUlps = 64;
double fd_resolution(double loss_value, double h);

struct GradCheckResult {
  double max_rel_error = 0;
  int probes = 0;
  double resolution = 0;  // absolute differences below this count as agreement
  std::string worst;  // "<tensor>[<index>]: analytic vs numeric"
};

// Runs one backward pass of loss_fn() and compares the gradients of `wrt`
// against central differences at `probes` randomly chosen elements. A probe
// agrees when |analytic - numeric| is within the resolution, otherwise it
// contributes its relative error. Each probe re-evaluates loss_fn twice under
// NoGradGuard with the element nudged in place.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<NamedTensor>& wrt, int probes, double h,
                                std::mt19937_64& rng);

}  // namespace cmunet
