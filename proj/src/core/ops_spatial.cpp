#include <algorithm>
#include <cmath>
#include <vector>

#include "cmunet/ops.hpp"
#include "cmunet/parallel.hpp"

namespace cmunet {
namespace {

struct AxisSample {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  double w_hi = 0;  // weight of `hi`; `lo` gets 1 - w_hi
};

std::vector<AxisSample> axis_samples(std::int64_t in, std::int64_t out, ResizeMode mode) {
  std::vector<AxisSample> s(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    auto& e = s[static_cast<std::size_t>(i)];
    if (mode == ResizeMode::kNearest) {
      e.lo = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(i * scale)), in - 1);
      e.hi = e.lo;
      e.w_hi = 0;
    } else {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      e.lo = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(src)), in - 1);
      e.hi = std::min<std::int64_t>(e.lo + 1, in - 1);
      e.w_hi = src - static_cast<double>(e.lo);
    }
  }
  return s;
}

}  // namespace

Tensor resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w, ResizeMode mode) {
  if (x.ndim() != 4) throw DimensionError("resize: expects NCHW");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize: target must be at least 1x1");
  const std::int64_t planes = x.dim(0) * x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  if (in_h == out_h && in_w == out_w) {
    // Identity: keep it differentiable but skip interpolation.
    return reshape(x, x.shape());
  }
  const auto rows = axis_samples(in_h, out_h, mode);
  const auto cols = axis_samples(in_w, out_w, mode);
  Tensor out = Tensor::empty({x.dim(0), x.dim(1), out_h, out_w}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    const bool par = planes * out_h * out_w > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t pl = 0; pl < planes; ++pl) {
      const T* src = in.data() + pl * in_h * in_w;
      T* dst = y.data() + pl * out_h * out_w;
      for (std::int64_t i = 0; i < out_h; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < out_w; ++j) {
          const auto& c = cols[static_cast<std::size_t>(j)];
          const double top = (1 - c.w_hi) * src[r.lo * in_w + c.lo] + c.w_hi * src[r.lo * in_w + c.hi];
          const double bot = (1 - c.w_hi) * src[r.hi * in_w + c.lo] + c.w_hi * src[r.hi * in_w + c.hi];
          dst[i * out_w + j] = static_cast<T>((1 - r.w_hi) * top + r.w_hi * bot);
        }
      }
    }
  });
  attach_backward(out, {x}, "resize", [x, rows, cols, planes, in_h, in_w, out_h, out_w](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      auto gx = x.grad_data<T>();
      const bool par = planes * out_h * out_w > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
      for (std::int64_t pl = 0; pl < planes; ++pl) {
        T* dst = gx.data() + pl * in_h * in_w;
        const T* src = go.data() + pl * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
          const auto& r = rows[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j < out_w; ++j) {
            const auto& c = cols[static_cast<std::size_t>(j)];
            const double v = src[i * out_w + j];
            dst[r.lo * in_w + c.lo] += static_cast<T>(v * (1 - r.w_hi) * (1 - c.w_hi));
            dst[r.lo * in_w + c.hi] += static_cast<T>(v * (1 - r.w_hi) * c.w_hi);
            dst[r.hi * in_w + c.lo] += static_cast<T>(v * r.w_hi * (1 - c.w_hi));
            dst[r.hi * in_w + c.hi] += static_cast<T>(v * r.w_hi * c.w_hi);
          }
        }
      }
    });
  });
  return out;
}

}  // namespace cmunet
