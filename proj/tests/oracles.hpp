#pragma once

// Straight-line reimplementations used only as oracles in the tests. Nothing
// here calls into the library beyond reading tensor values.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cmunet/tensor.hpp"

namespace oracle {

// NCHW cross-correlation with zero padding, all in long double.
inline std::vector<long double> conv2d(const cmunet::Tensor& x, const cmunet::Tensor& w,
                                       const cmunet::Tensor& bias, std::int64_t stride,
                                       std::int64_t pad, std::int64_t groups) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = w.dim(0), Cg = w.dim(1), K = w.dim(2);
  const auto OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  const auto Og = O / groups;
  (void)C;
  std::vector<long double> y(static_cast<std::size_t>(B * O * OH * OW), 0.0L);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < O; ++o) {
      const auto g = o / Og;
      for (std::int64_t i = 0; i < OH; ++i)
        for (std::int64_t j = 0; j < OW; ++j) {
          long double acc = bias.defined() ? bias.at(o) : 0.0L;
          for (std::int64_t c = 0; c < Cg; ++c)
            for (std::int64_t u = 0; u < K; ++u)
              for (std::int64_t v = 0; v < K; ++v) {
                const auto r = i * stride - pad + u, s = j * stride - pad + v;
                if (r < 0 || r >= H || s < 0 || s >= W) continue;
                acc += static_cast<long double>(x.at(((b * C + g * Cg + c) * H + r) * W + s)) *
                       w.at(((o * Cg + c) * K + u) * K + v);
              }
          y[static_cast<std::size_t>(((b * O + o) * OH + i) * OW + j)] = acc;
        }
    }
  return y;
}

// h_t = exp(dt a) h_{t-1} + (exp(dt a) - 1)/a * b x, y = c.h + d x, with the
// a -> 0 limit dt * b * x. Inputs as in the library layout.
inline std::vector<long double> scan(const cmunet::Tensor& x, const cmunet::Tensor& delta,
                                     const cmunet::Tensor& a, const cmunet::Tensor& b,
                                     const cmunet::Tensor& c, const cmunet::Tensor& d) {
  const auto B = x.dim(0), L = x.dim(1), D = x.dim(2), N = a.dim(1);
  std::vector<long double> y(static_cast<std::size_t>(B * L * D));
  for (std::int64_t bb = 0; bb < B; ++bb)
    for (std::int64_t k = 0; k < D; ++k) {
      std::vector<long double> h(static_cast<std::size_t>(N), 0.0L);
      for (std::int64_t l = 0; l < L; ++l) {
        const long double dt = delta.at((bb * L + l) * D + k), xv = x.at((bb * L + l) * D + k);
        long double acc = static_cast<long double>(d.at(k)) * xv;
        for (std::int64_t n = 0; n < N; ++n) {
          const long double av = a.at(k * N + n);
          const long double decay = std::exp(dt * av);
          const long double gain = av == 0 ? dt : std::expm1(dt * av) / av;
          auto& hn = h[static_cast<std::size_t>(n)];
          hn = decay * hn + gain * static_cast<long double>(b.at((bb * L + l) * N + n)) * xv;
          acc += static_cast<long double>(c.at((bb * L + l) * N + n)) * hn;
        }
        y[static_cast<std::size_t>((bb * L + l) * D + k)] = acc;
      }
    }
  return y;
}

// Layer-by-layer count of a ResNet basic-block trunk (stem conv + BN, stages
// of two 3x3 convs with BN, 1x1 projection + BN where the shape changes).
inline std::int64_t resnet_trunk_parameters(std::int64_t in_ch, std::array<std::int64_t, 4> ch,
                                            std::array<std::int64_t, 4> blocks) {
  std::int64_t n = 7 * 7 * in_ch * ch[0] + 2 * ch[0];
  std::int64_t prev = ch[0];
  for (int s = 0; s < 4; ++s) {
    for (std::int64_t k = 0; k < blocks[s]; ++k) {
      const std::int64_t in = k == 0 ? prev : ch[s];
      n += 9 * in * ch[s] + 2 * ch[s];
      n += 9 * ch[s] * ch[s] + 2 * ch[s];
      if (k == 0 && (s > 0 || in != ch[s])) n += in * ch[s] + 2 * ch[s];
    }
    prev = ch[s];
  }
  return n;
}

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;
  long double value() const { return den == 0 ? 0.0L : static_cast<long double>(num) / den; }
};

}  // namespace oracle
