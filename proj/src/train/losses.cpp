#include "cmunet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cmunet/ops.hpp"

namespace cmunet {

namespace {

void check_target(const Tensor& logits, const LabelMap& target, const char* op) {
  if (logits.ndim() != 4 || logits.dim(0) != target.batch || logits.dim(2) != target.height ||
      logits.dim(3) != target.width) {
    throw DimensionError(std::string(op) + ": logits " + shape_to_string(logits.shape()) +
                         " do not match target " + std::to_string(target.batch) + "x" +
                         std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  if (static_cast<std::int64_t>(target.values.size()) != target.pixels()) {
    throw DataError(std::string(op) + ": target size mismatch");
  }
  const auto k = logits.dim(1);
  for (auto v : target.values) {
    if (v < 0 || v >= k) {
      throw DataError(std::string(op) + ": class index " + std::to_string(v) + " outside [0, " +
                      std::to_string(k) + ")");
    }
  }
}

// Softmax over the class axis, in double, laid out like the logits.
template <class T>
std::vector<double> softmax_probs(std::span<const T> z, std::int64_t B, std::int64_t K,
                                  std::int64_t P) {
  std::vector<double> p(z.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < P; ++i) {
      double mx = z[b * K * P + i];
      for (std::int64_t k = 1; k < K; ++k) mx = std::max<double>(mx, z[(b * K + k) * P + i]);
      double s = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        const double e = std::exp(z[(b * K + k) * P + i] - mx);
        p[static_cast<std::size_t>((b * K + k) * P + i)] = e;
        s += e;
      }
      for (std::int64_t k = 0; k < K; ++k) p[static_cast<std::size_t>((b * K + k) * P + i)] /= s;
    }
  }
  return p;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const LabelMap& target) {
  check_target(logits, target, "cross_entropy");
  const auto B = logits.dim(0), K = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  const double n = static_cast<double>(B * P);
  std::vector<double> probs;
  double loss = 0;
  dispatch_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const std::span<const T> z = logits.data<T>();
    probs = softmax_probs(z, B, K, P);
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t i = 0; i < P; ++i) {
        const auto t = target.values[static_cast<std::size_t>(b * P + i)];
        loss -= std::log(probs[static_cast<std::size_t>((b * K + t) * P + i)]);
      }
    }
  });
  Tensor out = Tensor::scalar(loss / n, logits.dtype());
  attach_backward(out, {logits}, "cross_entropy",
                  [logits, target, probs = std::move(probs), B, K, P, n](const Tensor& g) {
                    dispatch_dtype(g.dtype(), [&](auto tag) {
                      using T = decltype(tag);
                      const double go = g.data<T>()[0] / n;
                      auto gx = logits.grad_data<T>();
#pragma omp parallel for collapse(2) schedule(static)
                      for (std::int64_t b = 0; b < B; ++b) {
                        for (std::int64_t k = 0; k < K; ++k) {
                          for (std::int64_t i = 0; i < P; ++i) {
                            const auto idx = static_cast<std::size_t>((b * K + k) * P + i);
                            const double y =
                                target.values[static_cast<std::size_t>(b * P + i)] == k ? 1.0 : 0.0;
                            gx[idx] += static_cast<T>(go * (probs[idx] - y));
                          }
                        }
                      }
                    });
                  });
  return out;
}

Tensor dice_loss(const Tensor& logits, const LabelMap& target) {
  check_target(logits, target, "dice_loss");
  const auto B = logits.dim(0), K = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  std::vector<double> probs;
  std::vector<double> inter(static_cast<std::size_t>(K), 0.0);
  std::vector<double> denom(static_cast<std::size_t>(K), 0.0);
  dispatch_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const std::span<const T> z = logits.data<T>();
    probs = softmax_probs(z, B, K, P);
  });
  for (std::int64_t k = 0; k < K; ++k) {
    double in = 0, de = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t i = 0; i < P; ++i) {
        const double p = probs[static_cast<std::size_t>((b * K + k) * P + i)];
        const double y = target.values[static_cast<std::size_t>(b * P + i)] == k ? 1.0 : 0.0;
        in += p * y;
        de += p + y;
      }
    }
    inter[static_cast<std::size_t>(k)] = in;
    denom[static_cast<std::size_t>(k)] = de;
  }
  double score = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    score += (2 * inter[static_cast<std::size_t>(k)] + kDiceEpsilon) /
             (denom[static_cast<std::size_t>(k)] + kDiceEpsilon);
  }
  Tensor out = Tensor::scalar(1.0 - score / static_cast<double>(K), logits.dtype());
  attach_backward(
      out, {logits}, "dice_loss",
      [logits, target, probs = std::move(probs), inter, denom, B, K, P](const Tensor& g) {
        dispatch_dtype(g.dtype(), [&](auto tag) {
          using T = decltype(tag);
          const double go = g.data<T>()[0];
          auto gx = logits.grad_data<T>();
#pragma omp parallel for collapse(2) schedule(static)
          for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t i = 0; i < P; ++i) {
              const auto t = target.values[static_cast<std::size_t>(b * P + i)];
              // dL/dp_k for this pixel, then through the softmax Jacobian.
              double dot = 0;
              std::vector<double> gp(static_cast<std::size_t>(K));
              for (std::int64_t k = 0; k < K; ++k) {
                const double s = denom[static_cast<std::size_t>(k)] + kDiceEpsilon;
                const double num = 2 * inter[static_cast<std::size_t>(k)] + kDiceEpsilon;
                const double y = t == k ? 1.0 : 0.0;
                gp[static_cast<std::size_t>(k)] =
                    -go / static_cast<double>(K) * (2 * y * s - num) / (s * s);
                dot += probs[static_cast<std::size_t>((b * K + k) * P + i)] *
                       gp[static_cast<std::size_t>(k)];
              }
              for (std::int64_t k = 0; k < K; ++k) {
                const auto idx = static_cast<std::size_t>((b * K + k) * P + i);
                gx[idx] += static_cast<T>(probs[idx] * (gp[static_cast<std::size_t>(k)] - dot));
              }
            }
          }
        });
      });
  return out;
}

LabelMap downsample_labels(const LabelMap& target, std::int64_t height, std::int64_t width) {
  if (height == target.height && width == target.width) return target;
  LabelMap out{target.batch, height, width, {}};
  out.values.resize(static_cast<std::size_t>(out.pixels()));
  for (std::int64_t b = 0; b < target.batch; ++b) {
    for (std::int64_t i = 0; i < height; ++i) {
      const std::int64_t si = std::min(target.height - 1, i * target.height / height);
      for (std::int64_t j = 0; j < width; ++j) {
        const std::int64_t sj = std::min(target.width - 1, j * target.width / width);
        out.values[static_cast<std::size_t>((b * height + i) * width + j)] =
            target.values[static_cast<std::size_t>((b * target.height + si) * target.width + sj)];
      }
    }
  }
  return out;
}

LossBreakdown total_loss(const ModelOutputs& outputs, const LabelMap& target, double aux_weight) {
  LossBreakdown out;
  auto term = [](const Tensor& logits, const LabelMap& t) {
    return add(cross_entropy(logits, t), dice_loss(logits, t));
  };
  out.total = term(outputs.final_logits, target);
  out.principal = out.total.item();
  if (outputs.aux_logits.empty()) return out;
  Tensor aux;
  for (const auto& logits : outputs.aux_logits) {
    const Tensor t = term(logits, downsample_labels(target, logits.dim(2), logits.dim(3)));
    aux = aux.defined() ? add(aux, t) : t;
  }
  aux = scale(aux, 1.0 / static_cast<double>(outputs.aux_logits.size()));
  out.aux_mean = aux.item();
  out.total = add(out.total, scale(aux, aux_weight));
  return out;
}

}  // namespace cmunet
