#pragma once

// Decoder building blocks: the gated state-space block with channel/spatial
// attention, and the multi-scale skip aggregation module.

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "cmunet/nn.hpp"
#include "cmunet/scan2d.hpp"

namespace cmunet {

// Channel gate (pooled descriptors through a shared bottleneck) followed by a
// spatial gate (mean/max maps through a 7x7 conv), both multiplicative.
class CsAttention : public Module {
 public:
  CsAttention(std::int64_t channels, DType dtype, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  Tensor channel_gate(const Tensor& x) const;  // [B,C,1,1]
  Tensor spatial_gate(const Tensor& x) const;  // [B,1,H,W]

  std::shared_ptr<Conv2d> fc1, fc2, spatial;
};

struct CsMambaBlockConfig {
  std::int64_t channels = 16;
  double expansion = 2.0;
  std::int64_t state_size = 16;
  ssm::MergeMode merge = ssm::MergeMode::kSum;
  bool share_directions = false;
  bool residual = true;
  ssm::ScanImpl impl = ssm::ScanImpl::kParallel;

  std::int64_t inner() const;
};

class CsMambaBlock : public Module {
 public:
  CsMambaBlock(const CsMambaBlockConfig& cfg, DType dtype, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void set_scan_impl(ssm::ScanImpl impl);

  const CsMambaBlockConfig& config() const { return cfg_; }

  std::shared_ptr<Conv2d> in_proj, dwconv, gate_proj, out_proj;
  std::shared_ptr<ssm::Ssm2d> ssm;
  std::shared_ptr<LayerNorm> norm;
  std::shared_ptr<CsAttention> cs;

 private:
  CsMambaBlockConfig cfg_;
};

struct MsaaConfig {
  std::int64_t in_channels = 48;  // C1 = 3 * Ccur
  std::int64_t reduction = 4;     // alpha
  std::vector<std::int64_t> kernel_set{3, 5, 7};
  std::int64_t spatial_kernel = 7;

  std::int64_t out_channels() const;  // C2 = C1 / alpha
  void validate() const;
};

// Fuses an encoder level with its neighbors. A neighbor channel count of 0
// marks a missing neighbor; the current level stands in for it.
class Msaa : public Module {
 public:
  Msaa(std::int64_t cur_channels, std::int64_t prev_channels, std::int64_t next_channels,
       const MsaaConfig& cfg, DType dtype, std::mt19937_64& rng);

  // F_prev at twice the resolution of F_cur, F_next at half; either may be
  // undefined when missing.
  Tensor forward(const Tensor& f_prev, const Tensor& f_cur, const Tensor& f_next) const;

  Tensor fuse(const Tensor& f_prev, const Tensor& f_cur, const Tensor& f_next) const;  // F_ms
  Tensor spatial_path(const Tensor& f_ms) const;
  Tensor channel_path(const Tensor& f_ms) const;

  std::int64_t out_channels() const { return cfg_.out_channels(); }

  std::shared_ptr<Conv2d> prev_proj, next_proj, reduce;
  std::vector<std::shared_ptr<Conv2d>> scales;
  std::shared_ptr<Conv2d> spatial, channel_fc1, channel_fc2;

 private:
  Tensor align(const Tensor& f, const std::shared_ptr<Conv2d>& proj, const Tensor& f_cur) const;
  std::int64_t cur_channels_;
  MsaaConfig cfg_;
};

}  // namespace cmunet
