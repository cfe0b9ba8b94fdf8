#include <cmath>
#include <string>
#include <vector>

#include "cmunet/ops.hpp"
#include "cmunet/parallel.hpp"

namespace cmunet {

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, int axis) {
  if (eps <= 0) throw ContractError("layer_norm: eps must be positive");
  const int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimensionError("layer_norm: axis out of range");
  const std::int64_t channels = x.dim(axis);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw DimensionError("layer_norm: affine size mismatch for " + shape_to_string(x.shape()));
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);
  const std::int64_t positions = outer * inner;

  Tensor out = Tensor::empty(x.shape(), x.dtype());
  Tensor xhat = Tensor::empty(x.shape(), x.dtype());
  std::vector<double> rstd(static_cast<std::size_t>(positions));
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    auto xh = xhat.data<T>();
    auto ga = gamma.data<T>();
    auto be = beta.data<T>();
    const bool par = x.numel() > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t pos = 0; pos < positions; ++pos) {
      const std::int64_t o = pos / inner, p = pos % inner;
      const std::int64_t base = o * channels * inner + p;
      double m = 0;
      for (std::int64_t c = 0; c < channels; ++c) m += in[base + c * inner];
      m /= static_cast<double>(channels);
      double v = 0;
      for (std::int64_t c = 0; c < channels; ++c) {
        const double d = in[base + c * inner] - m;
        v += d * d;
      }
      v /= static_cast<double>(channels);
      const double r = 1.0 / std::sqrt(v + eps);
      rstd[static_cast<std::size_t>(pos)] = r;
      for (std::int64_t c = 0; c < channels; ++c) {
        const auto i = base + c * inner;
        const T n = static_cast<T>((in[i] - m) * r);
        xh[i] = n;
        y[i] = n * ga[c] + be[c];
      }
    }
  });

  attach_backward(out, {x, gamma, beta}, "layer_norm",
                  [x, gamma, beta, xhat, rstd = std::move(rstd), channels, inner,
                   positions](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      auto xh = xhat.data<T>();
      auto ga = gamma.data<T>();
      if (x.requires_grad()) {
        auto gx = x.grad_data<T>();
        const bool par = x.numel() > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
        for (std::int64_t pos = 0; pos < positions; ++pos) {
          const std::int64_t o = pos / inner, p = pos % inner;
          const std::int64_t base = o * channels * inner + p;
          double mg = 0, mgx = 0;
          for (std::int64_t c = 0; c < channels; ++c) {
            const auto i = base + c * inner;
            const double gh = static_cast<double>(go[i]) * ga[c];
            mg += gh;
            mgx += gh * xh[i];
          }
          mg /= static_cast<double>(channels);
          mgx /= static_cast<double>(channels);
          const double r = rstd[static_cast<std::size_t>(pos)];
          for (std::int64_t c = 0; c < channels; ++c) {
            const auto i = base + c * inner;
            const double gh = static_cast<double>(go[i]) * ga[c];
            gx[i] += static_cast<T>(r * (gh - mg - xh[i] * mgx));
          }
        }
      }
      if (gamma.requires_grad() || beta.requires_grad()) {
        std::vector<double> dg(static_cast<std::size_t>(channels)), db(dg.size());
        for (std::int64_t pos = 0; pos < positions; ++pos) {
          const std::int64_t o = pos / inner, p = pos % inner;
          const std::int64_t base = o * channels * inner + p;
          for (std::int64_t c = 0; c < channels; ++c) {
            const auto i = base + c * inner;
            dg[c] += static_cast<double>(go[i]) * xh[i];
            db[c] += go[i];
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_data<T>();
          for (std::int64_t c = 0; c < channels; ++c) gg[c] += static_cast<T>(dg[c]);
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad_data<T>();
          for (std::int64_t c = 0; c < channels; ++c) gb[c] += static_cast<T>(db[c]);
        }
      }
    });
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
  if (x.ndim() != 4) throw DimensionError("batch_norm: expects NCHW");
  const std::int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels ||
      running_mean.numel() != channels || running_var.numel() != channels) {
    throw DimensionError("batch_norm: parameter size mismatch for " + shape_to_string(x.shape()));
  }
  const std::int64_t count = batch * hw;
  if (training && count < 2) throw DimensionError("batch_norm: training needs >1 value per channel");

  Tensor out = Tensor::empty(x.shape(), x.dtype());
  Tensor xhat = Tensor::empty(x.shape(), x.dtype());
  std::vector<double> rstd(static_cast<std::size_t>(channels));
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    auto xh = xhat.data<T>();
    auto ga = gamma.data<T>();
    auto be = beta.data<T>();
    auto rm = running_mean.data<T>();
    auto rv = running_var.data<T>();
    const bool par = x.numel() > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t c = 0; c < channels; ++c) {
      double m = 0, v = 0;
      if (training) {
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* plane = in.data() + (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) m += plane[i];
        }
        m /= static_cast<double>(count);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* plane = in.data() + (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double d = plane[i] - m;
            v += d * d;
          }
        }
        v /= static_cast<double>(count);
        const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
        rm[c] = static_cast<T>((1 - momentum) * rm[c] + momentum * m);
        rv[c] = static_cast<T>((1 - momentum) * rv[c] + momentum * unbiased);
      } else {
        m = rm[c];
        v = rv[c];
      }
      const double r = 1.0 / std::sqrt(v + eps);
      rstd[static_cast<std::size_t>(c)] = r;
      for (std::int64_t b = 0; b < batch; ++b) {
        const std::int64_t off = (b * channels + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const T n = static_cast<T>((in[off + i] - m) * r);
          xh[off + i] = n;
          y[off + i] = n * ga[c] + be[c];
        }
      }
    }
  });

  attach_backward(out, {x, gamma, beta}, "batch_norm",
                  [x, gamma, beta, xhat, rstd = std::move(rstd), training, batch, channels, hw,
                   count](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      auto xh = xhat.data<T>();
      auto ga = gamma.data<T>();
      std::span<T> gg, gb, gx;
      if (gamma.requires_grad()) gg = gamma.grad_data<T>();
      if (beta.requires_grad()) gb = beta.grad_data<T>();
      if (x.requires_grad()) gx = x.grad_data<T>();
      const bool par = x.numel() > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
      for (std::int64_t c = 0; c < channels; ++c) {
        double sg = 0, sgx = 0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const std::int64_t off = (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            sg += go[off + i];
            sgx += static_cast<double>(go[off + i]) * xh[off + i];
          }
        }
        if (!gg.empty()) gg[c] += static_cast<T>(sgx);
        if (!gb.empty()) gb[c] += static_cast<T>(sg);
        if (gx.empty()) continue;
        const double scale = ga[c] * rstd[static_cast<std::size_t>(c)];
        const double n = static_cast<double>(count);
        for (std::int64_t b = 0; b < batch; ++b) {
          const std::int64_t off = (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            if (training) {
              gx[off + i] += static_cast<T>(scale * (go[off + i] - sg / n - xh[off + i] * sgx / n));
            } else {
              gx[off + i] += static_cast<T>(scale * go[off + i]);
            }
          }
        }
      }
    });
  });
  return out;
}

}  // namespace cmunet
