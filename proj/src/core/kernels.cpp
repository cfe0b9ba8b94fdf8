#include "cmunet/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <string>
#include <vector>

#include "cmunet/errors.hpp"
#include "cmunet/parallel.hpp"

namespace cmunet {

ConvGeometry make_conv_geometry(std::int64_t batch, std::int64_t in_channels, std::int64_t in_h,
                                std::int64_t in_w, std::int64_t out_channels,
                                std::int64_t kernel_h, std::int64_t kernel_w,
                                std::int64_t stride, std::int64_t padding, std::int64_t groups) {
  ConvGeometry g{batch,    in_channels, in_h,   in_w,    out_channels, kernel_h,
                 kernel_w, stride,      padding, groups, 0,            0};
  if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
    throw DimensionError("conv2d: channels " + std::to_string(in_channels) + "->" +
                         std::to_string(out_channels) + " not divisible by groups " +
                         std::to_string(groups));
  }
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: invalid stride/padding");
  const auto span_h = in_h + 2 * padding - kernel_h;
  const auto span_w = in_w + 2 * padding - kernel_w;
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  // Strided outputs use floor division (ResNet stem and downsample convs rely on it).
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

namespace kernels {
namespace {

constexpr std::int64_t kColBlock = 256;

bool in_parallel() { return omp_in_parallel() != 0; }

}  // namespace

template <class T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const std::int64_t row_groups = (m + 3) / 4;
  const std::int64_t col_blocks = (n + kColBlock - 1) / kColBlock;
  const bool par = !in_parallel() && m * n * k > kParallelGrain;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (std::int64_t rg = 0; rg < row_groups; ++rg) {
    for (std::int64_t cb = 0; cb < col_blocks; ++cb) {
      const std::int64_t i0 = rg * 4;
      const std::int64_t i1 = std::min(m, i0 + 4);
      const std::int64_t j0 = cb * kColBlock;
      const std::int64_t j1 = std::min(n, j0 + kColBlock);
      if (!accumulate) {
        for (std::int64_t i = i0; i < i1; ++i) std::fill(c + i * n + j0, c + i * n + j1, T(0));
      }
      if (i1 - i0 == 4) {
        T* c0 = c + i0 * n;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        for (std::int64_t p = 0; p < k; ++p) {
          const T a0 = a[i0 * k + p];
          const T a1 = a[(i0 + 1) * k + p];
          const T a2 = a[(i0 + 2) * k + p];
          const T a3 = a[(i0 + 3) * k + p];
          const T* brow = b + p * n;
#pragma omp simd
          for (std::int64_t j = j0; j < j1; ++j) {
            const T bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      } else {
        for (std::int64_t i = i0; i < i1; ++i) {
          T* crow = c + i * n;
          for (std::int64_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
#pragma omp simd
            for (std::int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
          }
        }
      }
    }
  }
}

template <class T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const bool par = !in_parallel() && m * n * k > kParallelGrain;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      const T* arow = a + i * k;
      const T* brow = b + j * k;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if (accumulate) {
        c[i * n + j] += acc;
      } else {
        c[i * n + j] = acc;
      }
    }
  }
}

template <class T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const std::int64_t col_blocks = (n + kColBlock - 1) / kColBlock;
  const bool par = !in_parallel() && m * n * k > kParallelGrain;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t cb = 0; cb < col_blocks; ++cb) {
      const std::int64_t j0 = cb * kColBlock;
      const std::int64_t j1 = std::min(n, j0 + kColBlock);
      T* crow = c + i * n;
      if (!accumulate) std::fill(crow + j0, crow + j1, T(0));
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
#pragma omp simd
        for (std::int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <class T>
void im2col(const ConvGeometry& g, const T* image, std::int64_t group, T* col) {
  const std::int64_t cpg = g.in_per_group();
  const std::int64_t rows = g.patch_size();
  const std::int64_t hw = g.out_h * g.out_w;
  const bool par = !in_parallel() && rows * hw > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t c = group * cpg + r / (g.kernel_h * g.kernel_w);
    const std::int64_t ki = (r / g.kernel_w) % g.kernel_h;
    const std::int64_t kj = r % g.kernel_w;
    const T* plane = image + c * g.in_h * g.in_w;
    T* out = col + r * hw;
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      const std::int64_t ih = oh * g.stride - g.padding + ki;
      T* orow = out + oh * g.out_w;
      if (ih < 0 || ih >= g.in_h) {
        std::fill(orow, orow + g.out_w, T(0));
        continue;
      }
      const T* irow = plane + ih * g.in_w;
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const std::int64_t iw = ow * g.stride - g.padding + kj;
        orow[ow] = (iw >= 0 && iw < g.in_w) ? irow[iw] : T(0);
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* col, std::int64_t group, T* image_grad) {
  const std::int64_t cpg = g.in_per_group();
  const std::int64_t kk = g.kernel_h * g.kernel_w;
  const std::int64_t hw = g.out_h * g.out_w;
  const bool par = !in_parallel() && cpg * kk * hw > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t cl = 0; cl < cpg; ++cl) {
    T* plane = image_grad + (group * cpg + cl) * g.in_h * g.in_w;
    for (std::int64_t kidx = 0; kidx < kk; ++kidx) {
      const std::int64_t ki = kidx / g.kernel_w;
      const std::int64_t kj = kidx % g.kernel_w;
      const T* crow = col + (cl * kk + kidx) * hw;
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        const std::int64_t ih = oh * g.stride - g.padding + ki;
        if (ih < 0 || ih >= g.in_h) continue;
        T* irow = plane + ih * g.in_w;
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          const std::int64_t iw = ow * g.stride - g.padding + kj;
          if (iw >= 0 && iw < g.in_w) irow[iw] += crow[oh * g.out_w + ow];
        }
      }
    }
  }
}

namespace {

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

bool batch_parallel(const ConvGeometry& g) {
  return !in_parallel() && g.batch > 1 && g.batch >= omp_get_max_threads();
}

template <class T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::int64_t planes = g.batch * g.in_channels;
  const bool par = !in_parallel() &&
                   planes * g.out_h * g.out_w * g.kernel_h * g.kernel_w > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const std::int64_t c = pl % g.in_channels;
    const T* in = x + pl * g.in_h * g.in_w;
    const T* ker = w + c * g.kernel_h * g.kernel_w;
    T* out = y + pl * g.out_h * g.out_w;
    const T b0 = bias ? bias[c] : T(0);
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        T acc = 0;
        for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
          const std::int64_t ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            if (iw < 0 || iw >= g.in_w) continue;
            acc += in[ih * g.in_w + iw] * ker[ki * g.kernel_w + kj];
          }
        }
        out[oh * g.out_w + ow] = acc + b0;
      }
    }
  }
}

template <class T>
void depthwise_backward_input(const ConvGeometry& g, const T* w, const T* grad_y, T* grad_x) {
  const std::int64_t planes = g.batch * g.in_channels;
  const bool par = !in_parallel() &&
                   planes * g.out_h * g.out_w * g.kernel_h * g.kernel_w > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const std::int64_t c = pl % g.in_channels;
    T* gin = grad_x + pl * g.in_h * g.in_w;
    const T* ker = w + c * g.kernel_h * g.kernel_w;
    const T* gout = grad_y + pl * g.out_h * g.out_w;
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const T gv = gout[oh * g.out_w + ow];
        for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
          const std::int64_t ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            if (iw < 0 || iw >= g.in_w) continue;
            gin[ih * g.in_w + iw] += gv * ker[ki * g.kernel_w + kj];
          }
        }
      }
    }
  }
}

template <class T>
void depthwise_backward_weight(const ConvGeometry& g, const T* x, const T* grad_y, T* grad_w,
                               T* grad_bias) {
  const bool par = !in_parallel() && g.batch * g.in_channels * g.out_h * g.out_w *
                                             g.kernel_h * g.kernel_w >
                                         kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    T* gk = grad_w + c * g.kernel_h * g.kernel_w;
    T bsum = 0;
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* in = x + (b * g.in_channels + c) * g.in_h * g.in_w;
      const T* gout = grad_y + (b * g.in_channels + c) * g.out_h * g.out_w;
      for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
        for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
          T acc = 0;
          for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
            const std::int64_t ih = oh * g.stride - g.padding + ki;
            if (ih < 0 || ih >= g.in_h) continue;
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
              const std::int64_t iw = ow * g.stride - g.padding + kj;
              if (iw < 0 || iw >= g.in_w) continue;
              acc += in[ih * g.in_w + iw] * gout[oh * g.out_w + ow];
            }
          }
          gk[ki * g.kernel_w + kj] += acc;
        }
      }
      if (grad_bias) {
        for (std::int64_t i = 0; i < g.out_h * g.out_w; ++i) bsum += gout[i];
      }
    }
    if (grad_bias) grad_bias[c] += bsum;
  }
}

}  // namespace

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  if (g.depthwise()) {
    depthwise_forward(g, x, w, bias, y);
    return;
  }
  const std::int64_t hw = g.out_h * g.out_w;
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t opg = g.out_per_group();
  const std::int64_t patch = g.patch_size();
  const bool pointwise = is_pointwise(g);
#pragma omp parallel if (batch_parallel(g))
  {
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(patch * hw));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* xb = x + b * g.in_channels * in_plane;
      T* yb = y + b * g.out_channels * hw;
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        const T* src = nullptr;
        if (pointwise) {
          src = xb + grp * g.in_per_group() * in_plane;
        } else {
          im2col(g, xb, grp, col.data());
          src = col.data();
        }
        gemm_nn(opg, hw, patch, w + grp * opg * patch, src, yb + grp * opg * hw, false);
      }
      if (bias) {
        for (std::int64_t c = 0; c < g.out_channels; ++c) {
          T* plane = yb + c * hw;
          const T bv = bias[c];
          for (std::int64_t i = 0; i < hw; ++i) plane[i] += bv;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* grad_y, T* grad_x) {
  if (g.depthwise()) {
    depthwise_backward_input(g, w, grad_y, grad_x);
    return;
  }
  const std::int64_t hw = g.out_h * g.out_w;
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t opg = g.out_per_group();
  const std::int64_t patch = g.patch_size();
  const bool pointwise = is_pointwise(g);
#pragma omp parallel if (batch_parallel(g))
  {
    std::vector<T> col(static_cast<std::size_t>(patch * hw));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* gyb = grad_y + b * g.out_channels * hw;
      T* gxb = grad_x + b * g.in_channels * in_plane;
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        gemm_tn(patch, hw, opg, w + grp * opg * patch, gyb + grp * opg * hw, col.data(), false);
        if (pointwise) {
          T* dst = gxb + grp * g.in_per_group() * in_plane;
          for (std::int64_t i = 0; i < patch * hw; ++i) dst[i] += col[static_cast<std::size_t>(i)];
        } else {
          col2im(g, col.data(), grp, gxb);
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* grad_y, T* grad_w,
                            T* grad_bias) {
  if (g.depthwise()) {
    depthwise_backward_weight(g, x, grad_y, grad_w, grad_bias);
    return;
  }
  const std::int64_t hw = g.out_h * g.out_w;
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t opg = g.out_per_group();
  const std::int64_t patch = g.patch_size();
  const std::int64_t wsize = g.out_channels * patch;
  const bool pointwise = is_pointwise(g);
  // Per-image partial weight gradients, summed afterwards in image order.
  std::vector<T> partial(static_cast<std::size_t>(g.batch * wsize));
#pragma omp parallel if (batch_parallel(g))
  {
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(patch * hw));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* xb = x + b * g.in_channels * in_plane;
      const T* gyb = grad_y + b * g.out_channels * hw;
      T* pw = partial.data() + b * wsize;
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        const T* src = nullptr;
        if (pointwise) {
          src = xb + grp * g.in_per_group() * in_plane;
        } else {
          im2col(g, xb, grp, col.data());
          src = col.data();
        }
        gemm_nt(opg, patch, hw, gyb + grp * opg * hw, src, pw + grp * opg * patch, false);
      }
    }
  }
  const bool par = !in_parallel() && wsize * g.batch > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < wsize; ++i) {
    T acc = 0;
    for (std::int64_t b = 0; b < g.batch; ++b) acc += partial[static_cast<std::size_t>(b * wsize + i)];
    grad_w[i] += acc;
  }
  if (grad_bias) {
    for (std::int64_t c = 0; c < g.out_channels; ++c) {
      T acc = 0;
      for (std::int64_t b = 0; b < g.batch; ++b) {
        const T* plane = grad_y + (b * g.out_channels + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
      }
      grad_bias[c] += acc;
    }
  }
}

#define CMUNET_INSTANTIATE(T)                                                                  \
  template void gemm_nn<T>(std::int64_t, std::int64_t, std::int64_t, const T*, const T*, T*, \
                           bool);                                                            \
  template void gemm_nt<T>(std::int64_t, std::int64_t, std::int64_t, const T*, const T*, T*, \
                           bool);                                                            \
  template void gemm_tn<T>(std::int64_t, std::int64_t, std::int64_t, const T*, const T*, T*, \
                           bool);                                                            \
  template void im2col<T>(const ConvGeometry&, const T*, std::int64_t, T*);                   \
  template void col2im<T>(const ConvGeometry&, const T*, std::int64_t, T*);                   \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);     \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);        \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);

CMUNET_INSTANTIATE(float)
CMUNET_INSTANTIATE(double)

#undef CMUNET_INSTANTIATE

}  // namespace kernels
}  // namespace cmunet
