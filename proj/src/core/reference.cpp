#include "cmunet/reference.hpp"

namespace cmunet::reference {

template <class T>
void matmul(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::int64_t cig = g.in_per_group();
  const std::int64_t cog = g.out_per_group();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      const std::int64_t grp = co / cog;
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          T acc = bias ? bias[co] : T(0);
          for (std::int64_t ci = 0; ci < cig; ++ci) {
            const std::int64_t c = grp * cig + ci;
            for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
              for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
                const std::int64_t ih = oh * g.stride - g.padding + ki;
                const std::int64_t iw = ow * g.stride - g.padding + kj;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                acc += x[((b * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] *
                       w[((co * cig + ci) * g.kernel_h + ki) * g.kernel_w + kj];
              }
            }
          }
          y[((b * g.out_channels + co) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

template void matmul<float>(std::int64_t, std::int64_t, std::int64_t, const float*,
                            const float*, float*);
template void matmul<double>(std::int64_t, std::int64_t, std::int64_t, const double*,
                             const double*, double*);
template void conv2d_forward<float>(const ConvGeometry&, const float*, const float*,
                                    const float*, float*);
template void conv2d_forward<double>(const ConvGeometry&, const double*, const double*,
                                     const double*, double*);

}  // namespace cmunet::reference
