#pragma once

#include <cstdint>
#include <vector>

#include "cmunet/nn.hpp"

namespace cmunet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay, applied to matrices and conv kernels only (never to
// biases, norm affines, skip vectors or the log state matrix).
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, const AdamWConfig& cfg);

  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  bool decays(const std::string& name) const;
  // "adam.m.<name>" / "adam.v.<name>" pairs.
  std::vector<NamedTensor> state() const;

 private:
  std::vector<NamedTensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::vector<bool> decay_;
  AdamWConfig cfg_;
  std::int64_t steps_ = 0;
};

// base * (1 + cos(pi * step / (total - 1))) / 2; reaches 0 at the last step.
double cosine_lr(double base, std::int64_t step, std::int64_t total_steps);

}  // namespace cmunet
