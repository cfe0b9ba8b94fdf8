#include <algorithm>
#include <limits>
#include <string>

#include "cmunet/kernels.hpp"
#include "cmunet/ops.hpp"
#include "cmunet/parallel.hpp"

namespace cmunet {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opts) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw DimensionError("conv2d: expects NCHW input and 4-d weight, got " +
                         shape_to_string(x.shape()) + " and " + shape_to_string(w.shape()));
  }
  check_same_dtype(x, w, "conv2d");
  if (x.dim(1) % opts.groups != 0 || w.dim(1) * opts.groups != x.dim(1)) {
    throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " incompatible with weight " + shape_to_string(w.shape()) +
                         " and groups " + std::to_string(opts.groups));
  }
  const ConvGeometry geo =
      make_conv_geometry(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                         opts.stride, opts.padding, opts.groups);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != w.dim(0))) {
    throw DimensionError("conv2d: bias shape " + shape_to_string(bias.shape()));
  }
  Tensor out = Tensor::empty({geo.batch, geo.out_channels, geo.out_h, geo.out_w}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::conv2d_forward<T>(geo, x.data<T>().data(), w.data<T>().data(),
                               bias.defined() ? bias.data<T>().data() : nullptr,
                               out.data<T>().data());
  });
  attach_backward(out, {x, w, bias}, "conv2d", [x, w, bias, geo](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gy = g.data<T>().data();
      if (x.requires_grad()) {
        kernels::conv2d_backward_input<T>(geo, w.data<T>().data(), gy, x.grad_data<T>().data());
      }
      const bool want_w = w.requires_grad();
      const bool want_b = bias.defined() && bias.requires_grad();
      if (want_w || want_b) {
        // The weight kernel always produces the weight gradient; route it to a
        // scratch buffer when only the bias is trainable.
        std::vector<T> scratch;
        T* gw = nullptr;
        if (want_w) {
          gw = w.grad_data<T>().data();
        } else {
          scratch.assign(static_cast<std::size_t>(w.numel()), T(0));
          gw = scratch.data();
        }
        kernels::conv2d_backward_weight<T>(geo, x.data<T>().data(), gy, gw,
                                           want_b ? bias.grad_data<T>().data() : nullptr);
      }
    });
  });
  return out;
}

Tensor pool2d(const Tensor& x, PoolKind kind, std::int64_t kernel, std::int64_t stride,
              std::int64_t padding) {
  if (x.ndim() != 4) throw DimensionError("pool2d: expects NCHW, got " + shape_to_string(x.shape()));
  const std::int64_t batch = x.dim(0), channels = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const std::int64_t planes = batch * channels;
  const bool global = kind == PoolKind::kGlobalMean || kind == PoolKind::kGlobalMax;
  if (global) {
    kernel = std::max(in_h, in_w);
    stride = 1;
    padding = 0;
  } else {
    if (kernel < 1 || stride < 1 || padding < 0) throw DimensionError("pool2d: bad window");
    if (kernel > in_h + 2 * padding || kernel > in_w + 2 * padding) {
      throw DimensionError("pool2d: window " + std::to_string(kernel) + " exceeds padded extent");
    }
  }
  const std::int64_t out_h = global ? 1 : (in_h + 2 * padding - kernel) / stride + 1;
  const std::int64_t out_w = global ? 1 : (in_w + 2 * padding - kernel) / stride + 1;
  const bool is_max = kind == PoolKind::kMax || kind == PoolKind::kGlobalMax;
  Tensor out = Tensor::empty({batch, channels, out_h, out_w}, x.dtype());
  // For max kinds: flat in-plane index of the routed element.
  std::vector<std::int64_t> argmax(is_max ? static_cast<std::size_t>(planes * out_h * out_w) : 0);

  auto window = [=](std::int64_t oh, std::int64_t ow, std::int64_t& h0, std::int64_t& h1,
                    std::int64_t& w0, std::int64_t& w1) {
    if (global) {
      h0 = 0, h1 = in_h, w0 = 0, w1 = in_w;
      return;
    }
    h0 = oh * stride - padding;
    w0 = ow * stride - padding;
    h1 = std::min(h0 + kernel, in_h);
    w1 = std::min(w0 + kernel, in_w);
    h0 = std::max<std::int64_t>(h0, 0);
    w0 = std::max<std::int64_t>(w0, 0);
  };
  // Mean pooling divides by the full window (zero padding counted), except
  // global pooling which divides by the plane size.
  const std::int64_t divisor = global ? in_h * in_w : kernel * kernel;

  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    const bool par = planes * in_h * in_w > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t pl = 0; pl < planes; ++pl) {
      const T* plane = in.data() + pl * in_h * in_w;
      for (std::int64_t oh = 0; oh < out_h; ++oh) {
        for (std::int64_t ow = 0; ow < out_w; ++ow) {
          std::int64_t h0, h1, w0, w1;
          window(oh, ow, h0, h1, w0, w1);
          const std::int64_t o = (pl * out_h + oh) * out_w + ow;
          if (is_max) {
            std::int64_t best = -1;
            T best_v = -std::numeric_limits<T>::infinity();
            for (std::int64_t ih = h0; ih < h1; ++ih) {
              for (std::int64_t iw = w0; iw < w1; ++iw) {
                const T v = plane[ih * in_w + iw];
                if (best < 0 || v > best_v) {
                  best = ih * in_w + iw;
                  best_v = v;
                }
              }
            }
            argmax[static_cast<std::size_t>(o)] = best;
            y[o] = best_v;
          } else {
            T acc = 0;
            for (std::int64_t ih = h0; ih < h1; ++ih) {
              for (std::int64_t iw = w0; iw < w1; ++iw) acc += plane[ih * in_w + iw];
            }
            y[o] = acc / static_cast<T>(divisor);
          }
        }
      }
    }
  });

  attach_backward(out, {x}, "pool2d",
                  [x, is_max, planes, in_h, in_w, out_h, out_w, divisor, window,
                   argmax = std::move(argmax)](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      auto gx = x.grad_data<T>();
      const bool par = planes * in_h * in_w > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
      for (std::int64_t pl = 0; pl < planes; ++pl) {
        T* gplane = gx.data() + pl * in_h * in_w;
        for (std::int64_t oh = 0; oh < out_h; ++oh) {
          for (std::int64_t ow = 0; ow < out_w; ++ow) {
            const std::int64_t o = (pl * out_h + oh) * out_w + ow;
            if (is_max) {
              gplane[argmax[static_cast<std::size_t>(o)]] += go[o];
            } else {
              std::int64_t h0, h1, w0, w1;
              window(oh, ow, h0, h1, w0, w1);
              const T share = go[o] / static_cast<T>(divisor);
              for (std::int64_t ih = h0; ih < h1; ++ih) {
                for (std::int64_t iw = w0; iw < w1; ++iw) gplane[ih * in_w + iw] += share;
              }
            }
          }
        }
      }
    });
  });
  return out;
}

}  // namespace cmunet
