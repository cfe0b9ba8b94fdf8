#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

#include "cmunet/parallel.hpp"
#include "cmunet/ssm.hpp"

namespace cmunet::ssm {
namespace {

std::atomic<double> g_perturbation{0.0};

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

struct ChunkLayout {
  std::int64_t count = 1;
  std::int64_t size = 1;
  std::int64_t begin(std::int64_t p) const { return p * size; }
  std::int64_t end(std::int64_t p, std::int64_t length) const {
    return std::min(length, (p + 1) * size);
  }
};

ChunkLayout make_layout(std::int64_t length, std::int64_t batch, std::int64_t requested) {
  std::int64_t p = requested > 0 ? requested : scan_chunk_count(length, batch);
  p = std::clamp<std::int64_t>(p, 1, std::max<std::int64_t>(length, 1));
  ChunkLayout layout;
  layout.size = ceil_div(length, p);
  layout.count = ceil_div(length, layout.size);
  return layout;
}

// Up-sweep of every chunk (its aggregate affine map from a zero state), then a
// Blelloch exclusive scan across chunks per (batch, channel, state) lane.
// Returns the hidden state entering each chunk, laid out [B, P, D*N].
template <class T>
std::vector<double> chunk_carries(const ScanDims& dims, const ScanBuffers<T>& in,
                                  const ChunkLayout& layout) {
  const std::int64_t B = dims.batch, L = dims.length, D = dims.inner, N = dims.state;
  const std::int64_t DN = D * N, P = layout.count;
  // decay is accumulated as a log; a running product of thousands of factors
  // crawls through the subnormal range, which is very slow
  std::vector<double> decay(static_cast<std::size_t>(B * P * DN), 0.0);
  std::vector<double> drive(static_cast<std::size_t>(B * P * DN), 0.0);

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < P; ++p) {
      double* dec = decay.data() + (b * P + p) * DN;
      double* drv = drive.data() + (b * P + p) * DN;
      for (std::int64_t l = layout.begin(p); l < layout.end(p, L); ++l) {
        const T* xr = in.x + (b * L + l) * D;
        const T* dr = in.delta + (b * L + l) * D;
        const T* br = in.b + (b * L + l) * N;
        for (std::int64_t d = 0; d < D; ++d) {
          const double dl = dr[d], xv = xr[d];
          for (std::int64_t n = 0; n < N; ++n) {
            const double z = dl * static_cast<double>(in.a[d * N + n]);
            const double abar = std::exp(z);
            const double u = zoh_phi(z) * dl * static_cast<double>(br[n]) * xv;
            dec[d * N + n] += z;
            drv[d * N + n] = abar * drv[d * N + n] + u;
          }
        }
      }
      for (std::int64_t i = 0; i < DN; ++i) dec[i] = std::exp(dec[i]);
    }
  }

  std::vector<double> carry(static_cast<std::size_t>(B * P * DN), 0.0);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t lane = 0; lane < DN; ++lane) {
      std::vector<AffineScanElement> elems(static_cast<std::size_t>(P));
      for (std::int64_t p = 0; p < P; ++p) {
        const auto i = static_cast<std::size_t>((b * P + p) * DN + lane);
        elems[static_cast<std::size_t>(p)] = {decay[i], drive[i]};
      }
      exclusive_scan(elems);
      for (std::int64_t p = 0; p < P; ++p) {
        carry[static_cast<std::size_t>((b * P + p) * DN + lane)] =
            elems[static_cast<std::size_t>(p)].apply(0.0);
      }
    }
  }
  return carry;
}

// Adjoint of one time step for every channel. `adj` holds a_bar_{l+1} * G_{l+1}
// on entry and a_bar_l * G_l on exit.
template <class T>
void backward_step(const ScanDims& dims, const ScanBuffers<T>& in, const T* grad_y,
                   const ScanGradBuffers<T>& grads, std::int64_t b, std::int64_t l,
                   const double* h_prev, const double* h_cur, double* adj, double* grad_a,
                   double* grad_d, double* grad_b_row, double* grad_c_row) {
  const std::int64_t L = dims.length, D = dims.inner, N = dims.state;
  const std::int64_t row_d = (b * L + l) * D;
  const std::int64_t row_n = (b * L + l) * N;
  const T* br = in.b + row_n;
  const T* cr = in.c + row_n;
  std::fill(grad_b_row, grad_b_row + N, 0.0);
  std::fill(grad_c_row, grad_c_row + N, 0.0);
  for (std::int64_t d = 0; d < D; ++d) {
    const double gy = grad_y[row_d + d];
    const double dl = in.delta[row_d + d];
    const double xv = in.x[row_d + d];
    double gx = static_cast<double>(in.d[d]) * gy;
    double gdl = 0;
    for (std::int64_t n = 0; n < N; ++n) {
      const std::int64_t idx = d * N + n;
      const double av = in.a[idx];
      const double z = dl * av;
      const double abar = std::exp(z);
      const double phi = zoh_phi(z);
      const double dphi = zoh_phi_derivative(z);
      const double bv = br[n];
      const double g = adj[idx] + static_cast<double>(cr[n]) * gy;
      const double hp = h_prev ? h_prev[idx] : 0.0;
      const double g_abar = g * hp;
      const double f = dl * phi;
      const double g_bbar = g * xv;
      const double g_f = g_bbar * bv;
      gx += g * f * bv;
      grad_b_row[n] += g_bbar * f;
      grad_c_row[n] += gy * h_cur[idx];
      gdl += g_abar * abar * av + g_f * (phi + z * dphi);
      grad_a[idx] += g_abar * abar * dl + g_f * dl * dl * dphi;
      adj[idx] = abar * g;
    }
    grad_d[d] += gy * xv;
    if (grads.x) grads.x[row_d + d] += static_cast<T>(gx);
    if (grads.delta) grads.delta[row_d + d] += static_cast<T>(gdl);
  }
  if (grads.b) {
    for (std::int64_t n = 0; n < N; ++n) grads.b[row_n + n] += static_cast<T>(grad_b_row[n]);
  }
  if (grads.c) {
    for (std::int64_t n = 0; n < N; ++n) grads.c[row_n + n] += static_cast<T>(grad_c_row[n]);
  }
}

template <class T>
void forward_step(const ScanDims& dims, const ScanBuffers<T>& in, std::int64_t b, std::int64_t l,
                  double* h, T* y_row) {
  const std::int64_t L = dims.length, D = dims.inner, N = dims.state;
  const std::int64_t row_d = (b * L + l) * D;
  const T* br = in.b + (b * L + l) * N;
  const T* cr = in.c + (b * L + l) * N;
  for (std::int64_t d = 0; d < D; ++d) {
    const double dl = in.delta[row_d + d];
    const double xv = in.x[row_d + d];
    double acc = 0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double z = dl * static_cast<double>(in.a[d * N + n]);
      double& hv = h[d * N + n];
      hv = std::exp(z) * hv + zoh_phi(z) * dl * static_cast<double>(br[n]) * xv;
      acc += static_cast<double>(cr[n]) * hv;
    }
    y_row[d] = static_cast<T>(acc + static_cast<double>(in.d[d]) * xv);
  }
}

}  // namespace

std::int64_t scan_chunk_count(std::int64_t length, std::int64_t batch) {
  if (length <= 0) return 1;
  if (deterministic()) return std::clamp<std::int64_t>(ceil_div(length, 256), 1, 64);
  const std::int64_t lanes_wanted = 4 * static_cast<std::int64_t>(omp_get_max_threads());
  const std::int64_t per_batch = std::max<std::int64_t>(1, ceil_div(lanes_wanted, batch));
  return std::clamp<std::int64_t>(per_batch, 1, std::max<std::int64_t>(1, length / 32));
}

void set_parallel_scan_perturbation(double eps) { g_perturbation = eps; }
double parallel_scan_perturbation() { return g_perturbation; }

// Reference recurrence, one step at a time.
template <class T>
void scan_forward_seq(const ScanDims& dims, const ScanBuffers<T>& in, T* y) {
  const std::int64_t B = dims.batch, L = dims.length, D = dims.inner, N = dims.state;
  std::vector<double> h(static_cast<std::size_t>(D * N));
  for (std::int64_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::int64_t l = 0; l < L; ++l) {
      const T* xr = in.x + (b * L + l) * D;
      const T* dr = in.delta + (b * L + l) * D;
      const T* br = in.b + (b * L + l) * N;
      const T* cr = in.c + (b * L + l) * N;
      for (std::int64_t d = 0; d < D; ++d) {
        double acc = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          const double dl = dr[d];
          const double z = dl * static_cast<double>(in.a[d * N + n]);
          const double a_bar = std::exp(z);
          const double b_bar = zoh_phi(z) * dl * static_cast<double>(br[n]);
          double& hv = h[static_cast<std::size_t>(d * N + n)];
          hv = a_bar * hv + b_bar * static_cast<double>(xr[d]);
          acc += static_cast<double>(cr[n]) * hv;
        }
        y[(b * L + l) * D + d] = static_cast<T>(acc + static_cast<double>(in.d[d]) * xr[d]);
      }
    }
  }
}

template <class T>
void scan_forward_parallel(const ScanDims& dims, const ScanBuffers<T>& in, T* y,
                           std::int64_t chunks) {
  const std::int64_t B = dims.batch, L = dims.length, DN = dims.inner * dims.state;
  if (L == 0) return;
  const ChunkLayout layout = make_layout(L, B, chunks);
  const std::int64_t P = layout.count;
  const std::vector<double> carry = chunk_carries(dims, in, layout);

  // Down-sweep: rerun each chunk from its carried-in state.
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < P; ++p) {
      std::vector<double> h(carry.begin() + (b * P + p) * DN, carry.begin() + (b * P + p + 1) * DN);
      for (std::int64_t l = layout.begin(p); l < layout.end(p, L); ++l) {
        forward_step(dims, in, b, l, h.data(), y + (b * L + l) * dims.inner);
      }
    }
  }
  const double eps = g_perturbation;
  if (eps != 0.0) y[0] = static_cast<T>(y[0] + eps);
}

template <class T>
void scan_backward_seq(const ScanDims& dims, const ScanBuffers<T>& in, const T* grad_y,
                       const ScanGradBuffers<T>& grads) {
  const std::int64_t B = dims.batch, L = dims.length, D = dims.inner, N = dims.state;
  const std::int64_t DN = D * N;
  std::vector<double> hist(static_cast<std::size_t>(L * DN));
  std::vector<double> adj(static_cast<std::size_t>(DN));
  std::vector<double> grad_a(static_cast<std::size_t>(DN), 0.0);
  std::vector<double> grad_d(static_cast<std::size_t>(D), 0.0);
  std::vector<double> gb_row(static_cast<std::size_t>(N)), gc_row(static_cast<std::size_t>(N));
  std::vector<T> y_scratch(static_cast<std::size_t>(D));
  for (std::int64_t b = 0; b < B; ++b) {
    std::vector<double> h(static_cast<std::size_t>(DN), 0.0);
    for (std::int64_t l = 0; l < L; ++l) {
      forward_step(dims, in, b, l, h.data(), y_scratch.data());
      std::copy(h.begin(), h.end(), hist.begin() + l * DN);
    }
    std::fill(adj.begin(), adj.end(), 0.0);
    for (std::int64_t l = L - 1; l >= 0; --l) {
      const double* h_prev = l > 0 ? hist.data() + (l - 1) * DN : nullptr;
      backward_step(dims, in, grad_y, grads, b, l, h_prev, hist.data() + l * DN, adj.data(),
                    grad_a.data(), grad_d.data(), gb_row.data(), gc_row.data());
    }
  }
  if (grads.a) {
    for (std::int64_t i = 0; i < DN; ++i) grads.a[i] += static_cast<T>(grad_a[i]);
  }
  if (grads.d) {
    for (std::int64_t d = 0; d < D; ++d) grads.d[d] += static_cast<T>(grad_d[d]);
  }
}

// Reverse-direction scan of the transposed recurrence
//   G_l = a_bar_{l+1} * G_{l+1} + C_l * dy_l,
// chunked like the forward: per-chunk reverse aggregates, an exclusive scan
// over chunks in reverse order, then a local backward sweep per chunk that
// recomputes the chunk's hidden states from its forward carry.
template <class T>
void scan_backward_parallel(const ScanDims& dims, const ScanBuffers<T>& in, const T* grad_y,
                            const ScanGradBuffers<T>& grads, std::int64_t chunks) {
  const std::int64_t B = dims.batch, L = dims.length, D = dims.inner, N = dims.state;
  const std::int64_t DN = D * N;
  if (L == 0) return;
  const ChunkLayout layout = make_layout(L, B, chunks);
  const std::int64_t P = layout.count;
  const std::vector<double> carry = chunk_carries(dims, in, layout);

  auto a_bar_at = [&](std::int64_t b, std::int64_t l, std::int64_t d, std::int64_t n) {
    return std::exp(static_cast<double>(in.delta[(b * L + l) * D + d]) *
                    static_cast<double>(in.a[d * N + n]));
  };

  // Reverse aggregates: map G at the chunk end (first index of the next chunk)
  // to G at the chunk start.
  std::vector<double> rdecay(static_cast<std::size_t>(B * P * DN), 0.0);  // log, as above
  std::vector<double> rdrive(static_cast<std::size_t>(B * P * DN), 0.0);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < P; ++p) {
      double* dec = rdecay.data() + (b * P + p) * DN;
      double* drv = rdrive.data() + (b * P + p) * DN;
      for (std::int64_t l = layout.end(p, L) - 1; l >= layout.begin(p); --l) {
        const T* cr = in.c + (b * L + l) * N;
        for (std::int64_t d = 0; d < D; ++d) {
          const double gy = grad_y[(b * L + l) * D + d];
          for (std::int64_t n = 0; n < N; ++n) {
            const double z = l + 1 < L ? static_cast<double>(in.delta[(b * L + l + 1) * D + d]) *
                                             static_cast<double>(in.a[d * N + n])
                                       : -std::numeric_limits<double>::infinity();
            const double step_decay = std::exp(z);
            const double step_drive = static_cast<double>(cr[n]) * gy;
            dec[d * N + n] += z;
            drv[d * N + n] = step_decay * drv[d * N + n] + step_drive;
          }
        }
      }
      for (std::int64_t i = 0; i < DN; ++i) dec[i] = std::exp(dec[i]);
    }
  }
  std::vector<double> g_end(static_cast<std::size_t>(B * P * DN), 0.0);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t lane = 0; lane < DN; ++lane) {
      std::vector<AffineScanElement> elems(static_cast<std::size_t>(P));
      for (std::int64_t q = 0; q < P; ++q) {
        const std::int64_t p = P - 1 - q;
        const auto i = static_cast<std::size_t>((b * P + p) * DN + lane);
        elems[static_cast<std::size_t>(q)] = {rdecay[i], rdrive[i]};
      }
      exclusive_scan(elems);
      for (std::int64_t q = 0; q < P; ++q) {
        const std::int64_t p = P - 1 - q;
        g_end[static_cast<std::size_t>((b * P + p) * DN + lane)] =
            elems[static_cast<std::size_t>(q)].apply(0.0);
      }
    }
  }

  std::vector<double> part_a(static_cast<std::size_t>(B * P * DN), 0.0);
  std::vector<double> part_d(static_cast<std::size_t>(B * P * D), 0.0);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < P; ++p) {
      const std::int64_t s = layout.begin(p), e = layout.end(p, L);
      const double* h_in = carry.data() + (b * P + p) * DN;
      std::vector<double> hist(static_cast<std::size_t>((e - s) * DN));
      std::vector<double> h(h_in, h_in + DN);
      std::vector<T> y_scratch(static_cast<std::size_t>(D));
      for (std::int64_t l = s; l < e; ++l) {
        forward_step(dims, in, b, l, h.data(), y_scratch.data());
        std::copy(h.begin(), h.end(), hist.begin() + (l - s) * DN);
      }
      std::vector<double> adj(static_cast<std::size_t>(DN), 0.0);
      if (e < L) {
        const double* ge = g_end.data() + (b * P + p) * DN;
        for (std::int64_t d = 0; d < D; ++d) {
          for (std::int64_t n = 0; n < N; ++n) adj[d * N + n] = a_bar_at(b, e, d, n) * ge[d * N + n];
        }
      }
      std::vector<double> gb_row(static_cast<std::size_t>(N)), gc_row(static_cast<std::size_t>(N));
      double* pa = part_a.data() + (b * P + p) * DN;
      double* pd = part_d.data() + (b * P + p) * D;
      for (std::int64_t l = e - 1; l >= s; --l) {
        const double* h_prev = l > s ? hist.data() + (l - s - 1) * DN : h_in;
        backward_step(dims, in, grad_y, grads, b, l, h_prev, hist.data() + (l - s) * DN,
                      adj.data(), pa, pd, gb_row.data(), gc_row.data());
      }
    }
  }
  if (grads.a) {
    for (std::int64_t i = 0; i < DN; ++i) {
      double acc = 0;
      for (std::int64_t k = 0; k < B * P; ++k) acc += part_a[static_cast<std::size_t>(k * DN + i)];
      grads.a[i] += static_cast<T>(acc);
    }
  }
  if (grads.d) {
    for (std::int64_t d = 0; d < D; ++d) {
      double acc = 0;
      for (std::int64_t k = 0; k < B * P; ++k) acc += part_d[static_cast<std::size_t>(k * D + d)];
      grads.d[d] += static_cast<T>(acc);
    }
  }
}

#define CMUNET_INSTANTIATE(T)                                                                  \
  template void scan_forward_seq<T>(const ScanDims&, const ScanBuffers<T>&, T*);               \
  template void scan_forward_parallel<T>(const ScanDims&, const ScanBuffers<T>&, T*,           \
                                         std::int64_t);                                        \
  template void scan_backward_seq<T>(const ScanDims&, const ScanBuffers<T>&, const T*,         \
                                     const ScanGradBuffers<T>&);                               \
  template void scan_backward_parallel<T>(const ScanDims&, const ScanBuffers<T>&, const T*,    \
                                          const ScanGradBuffers<T>&, std::int64_t);

CMUNET_INSTANTIATE(float)
CMUNET_INSTANTIATE(double)

#undef CMUNET_INSTANTIATE

}  // namespace cmunet::ssm
