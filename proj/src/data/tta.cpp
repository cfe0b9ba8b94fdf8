#include "cmunet/tta.hpp"

#include "cmunet/metrics.hpp"
#include "cmunet/ops.hpp"

namespace cmunet {

namespace {

Tensor flip_hw(const Tensor& x, bool h, bool v) {
  Tensor y = x;
  if (h) y = flip(y, 3);
  if (v) y = flip(y, 2);
  return y;
}

}  // namespace

Tensor predict_probabilities(CmUnet& model, const Tensor& images, bool tta) {
  NoGradGuard guard;
  const bool was_training = model.training();
  model.set_training(false);
  Tensor acc;
  const int passes = tta ? 4 : 1;
  for (int t = 0; t < passes; ++t) {
    const bool h = (t & 1) != 0, v = (t & 2) != 0;
    const Tensor probs =
        flip_hw(softmax_channel(model.forward(flip_hw(images, h, v)).final_logits), h, v);
    acc = acc.defined() ? add(acc, probs) : probs;
  }
  model.set_training(was_training);
  return passes == 1 ? acc : scale(acc, 1.0 / passes);
}

LabelMap tta_predict(CmUnet& model, const Tensor& images, bool tta) {
  return argmax_classes(predict_probabilities(model, images, tta));
}

}  // namespace cmunet
