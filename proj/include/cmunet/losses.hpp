#pragma once

#include <cstdint>
#include <vector>

#include "cmunet/model.hpp"
#include "cmunet/tensor.hpp"

namespace cmunet {

// Class-index map [B,H,W].
struct LabelMap {
  std::int64_t batch = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int32_t> values;

  std::int64_t pixels() const { return batch * height * width; }
};

inline constexpr double kDiceEpsilon = 1e-6;

// Mean over pixels of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, const LabelMap& target);
// 1 - mean_k (2 sum p*y + eps) / (sum p + sum y + eps), sums over the batch.
Tensor dice_loss(const Tensor& logits, const LabelMap& target);

// Nearest-neighbour downsampling: row i reads source row floor(i * H / h).
LabelMap downsample_labels(const LabelMap& target, std::int64_t height, std::int64_t width);

struct LossBreakdown {
  Tensor total;
  double principal = 0;
  double aux_mean = 0;
};

// (ce + dice)(final) + aux_weight * mean_i (ce + dice)(aux_i).
LossBreakdown total_loss(const ModelOutputs& outputs, const LabelMap& target, double aux_weight);

}  // namespace cmunet
