#pragma once

// Four-direction flattening of a feature map, a selective scan along each
// direction, and the merge back onto the grid.

#include <array>
#include <cstdint>
#include <memory>
#include <random>

#include "cmunet/nn.hpp"
#include "cmunet/ssm.hpp"

namespace cmunet::ssm {

// 0: row-major, 1: reverse row-major, 2: column-major, 3: reverse column-major.
enum class ScanDirection { kRowFwd = 0, kRowRev = 1, kColFwd = 2, kColRev = 3 };

inline constexpr int kNumDirections = 4;

// Grid position (row-major index) visited at step `step` of direction `dir`.
std::int64_t direction_position(ScanDirection dir, std::int64_t step, std::int64_t h,
                                std::int64_t w);

enum class MergeMode { kSum, kMean };

// [B,C,H,W] -> [4,B,H*W,C]
Tensor cross_scan(const Tensor& x);
// [4,B,L,C] -> [B,C,H,W]
Tensor cross_merge(const Tensor& y4, std::int64_t h, std::int64_t w,
                   MergeMode mode = MergeMode::kSum);

struct Ssm2dConfig {
  std::int64_t channels = 1;
  std::int64_t state_size = 16;
  MergeMode merge = MergeMode::kSum;
  // One full parameter set for every direction. Otherwise each direction has
  // its own delta/B/C projections and A, D are shared.
  bool share_directions = false;
  ScanImpl impl = ScanImpl::kParallel;
  SsmInit init;
};

class Ssm2d : public Module {
 public:
  Ssm2d(const Ssm2dConfig& cfg, DType dtype, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;

  const Ssm2dConfig& config() const { return cfg_; }
  void set_impl(ScanImpl impl) { cfg_.impl = impl; }
  Tensor a_matrix() const;
  Tensor d_skip() const;
  // Projections used by direction k (the shared set when sharing).
  const SsmParams& direction(int k) const;

 private:
  Ssm2dConfig cfg_;
  std::shared_ptr<SsmParams> shared_;
  std::array<std::shared_ptr<SsmParams>, kNumDirections> dirs_;
  Tensor a_log_;
  Tensor d_skip_;
};

}  // namespace cmunet::ssm
