#pragma once

#include "cmunet/losses.hpp"
#include "cmunet/model.hpp"

namespace cmunet {

// Softmax probabilities [B,K,H,W]. With `tta`, the average over identity,
// horizontal, vertical and combined flips, each mapped back before averaging.
Tensor predict_probabilities(CmUnet& model, const Tensor& images, bool tta);
LabelMap tta_predict(CmUnet& model, const Tensor& images, bool tta = true);

}  // namespace cmunet
