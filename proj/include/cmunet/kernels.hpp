#pragma once

// OpenMP kernels behind the autodiff ops. Every kernel assigns each output
// element to exactly one thread and reduces in a fixed order, so results do
// not depend on the thread count.

#include <cstdint>

namespace cmunet {

struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t in_h = 1;
  std::int64_t in_w = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
  std::int64_t out_h = 1;
  std::int64_t out_w = 1;

  std::int64_t in_per_group() const { return in_channels / groups; }
  std::int64_t out_per_group() const { return out_channels / groups; }
  std::int64_t patch_size() const { return in_per_group() * kernel_h * kernel_w; }
  bool depthwise() const { return groups == in_channels && groups == out_channels; }
};

// Fills out_h/out_w; throws DimensionError when the geometry is invalid.
ConvGeometry make_conv_geometry(std::int64_t batch, std::int64_t in_channels, std::int64_t in_h,
                                std::int64_t in_w, std::int64_t out_channels,
                                std::int64_t kernel_h, std::int64_t kernel_w,
                                std::int64_t stride, std::int64_t padding, std::int64_t groups);

namespace kernels {

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate);
// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate);
// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate);

// Patch gather for one image and one group: col[patch_size, out_h*out_w].
template <class T>
void im2col(const ConvGeometry& g, const T* image, std::int64_t group, T* col);
// Scatter-add of col back into one image's input-gradient planes.
template <class T>
void col2im(const ConvGeometry& g, const T* col, std::int64_t group, T* image_grad);

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* grad_y, T* grad_x);
template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* grad_y, T* grad_w,
                            T* grad_bias);

}  // namespace kernels
}  // namespace cmunet
