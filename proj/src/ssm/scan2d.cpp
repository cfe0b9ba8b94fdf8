#include "cmunet/scan2d.hpp"

#include "cmunet/ops.hpp"

namespace cmunet::ssm {

std::int64_t direction_position(ScanDirection dir, std::int64_t step, std::int64_t h,
                                std::int64_t w) {
  const std::int64_t len = h * w;
  switch (dir) {
    case ScanDirection::kRowFwd:
      return step;
    case ScanDirection::kRowRev:
      return len - 1 - step;
    case ScanDirection::kColFwd:
      return (step % h) * w + step / h;
    case ScanDirection::kColRev: {
      const std::int64_t s = len - 1 - step;
      return (s % h) * w + s / h;
    }
  }
  return step;
}

namespace {

// pos[k * L + l] = grid index visited by direction k at step l.
std::vector<std::int64_t> position_table(std::int64_t h, std::int64_t w) {
  const std::int64_t len = h * w;
  std::vector<std::int64_t> pos(static_cast<std::size_t>(kNumDirections * len));
  for (int k = 0; k < kNumDirections; ++k) {
    for (std::int64_t l = 0; l < len; ++l) {
      pos[static_cast<std::size_t>(k * len + l)] =
          direction_position(static_cast<ScanDirection>(k), l, h, w);
    }
  }
  return pos;
}

}  // namespace

Tensor cross_scan(const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("cross_scan: expected [B,C,H,W], got " +
                                          shape_to_string(x.shape()));
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
  const auto pos = position_table(H, W);
  Tensor out = Tensor::empty({kNumDirections, B, L, C}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = x.data<T>();
    auto dst = out.data<T>();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t k = 0; k < kNumDirections; ++k) {
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t l = 0; l < L; ++l) {
          const std::int64_t p = pos[static_cast<std::size_t>(k * L + l)];
          T* row = dst.data() + ((k * B + b) * L + l) * C;
          for (std::int64_t c = 0; c < C; ++c) row[c] = src[(b * C + c) * L + p];
        }
      }
    }
  });
  attach_backward(out, {x}, "cross_scan", [x, pos, B, C, L](const Tensor& g) {
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gx = x.grad_data<T>();
      auto go = g.data<T>();
#pragma omp parallel for collapse(2) schedule(static)
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
          for (std::int64_t k = 0; k < kNumDirections; ++k) {
            for (std::int64_t l = 0; l < L; ++l) {
              const std::int64_t p = pos[static_cast<std::size_t>(k * L + l)];
              gx[(b * C + c) * L + p] += go[((k * B + b) * L + l) * C + c];
            }
          }
        }
      }
    });
  });
  return out;
}

Tensor cross_merge(const Tensor& y4, std::int64_t h, std::int64_t w, MergeMode mode) {
  if (y4.ndim() != 4 || y4.dim(0) != kNumDirections) {
    throw DimensionError("cross_merge: expected [4,B,L,C], got " + shape_to_string(y4.shape()));
  }
  const auto B = y4.dim(1), L = y4.dim(2), C = y4.dim(3);
  if (L != h * w) {
    throw DimensionError("cross_merge: sequence length " + std::to_string(L) + " != " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  const double factor = mode == MergeMode::kMean ? 1.0 / kNumDirections : 1.0;
  const auto pos = position_table(h, w);
  // inverse[k * L + p] = step at which direction k visits grid index p.
  std::vector<std::int64_t> inverse(pos.size());
  for (std::int64_t k = 0; k < kNumDirections; ++k) {
    for (std::int64_t l = 0; l < L; ++l) {
      inverse[static_cast<std::size_t>(k * L + pos[static_cast<std::size_t>(k * L + l)])] = l;
    }
  }
  Tensor out = Tensor::empty({B, C, h, w}, y4.dtype());
  dispatch_dtype(y4.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = y4.data<T>();
    auto dst = out.data<T>();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t p = 0; p < L; ++p) {
          double acc = 0;
          for (std::int64_t k = 0; k < kNumDirections; ++k) {
            const std::int64_t l = inverse[static_cast<std::size_t>(k * L + p)];
            acc += src[((k * B + b) * L + l) * C + c];
          }
          dst[(b * C + c) * L + p] = static_cast<T>(acc * factor);
        }
      }
    }
  });
  attach_backward(out, {y4}, "cross_merge", [y4, pos, B, C, L, factor](const Tensor& g) {
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gy = y4.grad_data<T>();
      auto go = g.data<T>();
#pragma omp parallel for collapse(2) schedule(static)
      for (std::int64_t k = 0; k < kNumDirections; ++k) {
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t l = 0; l < L; ++l) {
            const std::int64_t p = pos[static_cast<std::size_t>(k * L + l)];
            T* row = gy.data() + ((k * B + b) * L + l) * C;
            for (std::int64_t c = 0; c < C; ++c) {
              row[c] += static_cast<T>(go[(b * C + c) * L + p] * factor);
            }
          }
        }
      }
    });
  });
  return out;
}

Ssm2d::Ssm2d(const Ssm2dConfig& cfg, DType dtype, std::mt19937_64& rng)
    : Module(dtype), cfg_(cfg) {
  if (cfg.share_directions) {
    shared_ = register_module(
        "ssm", std::make_shared<SsmParams>(cfg.channels, cfg.state_size, dtype, rng, cfg.init));
    return;
  }
  a_log_ = register_parameter("a_log", initial_a_log(cfg.channels, cfg.state_size, dtype));
  d_skip_ = register_parameter("d_skip", Tensor::ones({cfg.channels}, dtype));
  for (int k = 0; k < kNumDirections; ++k) {
    dirs_[static_cast<std::size_t>(k)] = register_module(
        "dir" + std::to_string(k),
        std::make_shared<SsmParams>(cfg.channels, cfg.state_size, dtype, rng, cfg.init, false));
  }
}

Tensor Ssm2d::a_matrix() const {
  return shared_ ? shared_->a_matrix() : scale(exp(a_log_), -1.0);
}

Tensor Ssm2d::d_skip() const { return shared_ ? shared_->d_skip : d_skip_; }

const SsmParams& Ssm2d::direction(int k) const {
  return shared_ ? *shared_ : *dirs_[static_cast<std::size_t>(k)];
}

Tensor Ssm2d::forward(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.channels) {
    throw DimensionError("ssm2d: expected " + std::to_string(cfg_.channels) +
                         " channels, got " + shape_to_string(x.shape()));
  }
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
  const Tensor seqs = cross_scan(x);
  const Tensor a = a_matrix();
  const Tensor d = d_skip();
  Tensor y4;
  if (shared_) {
    const Tensor flat = reshape(seqs, {kNumDirections * B, L, C});
    y4 = reshape(selective_scan(project_delta_b_c(flat, *shared_), a, d, cfg_.impl),
                 {kNumDirections, B, L, C});
  } else {
    std::vector<Tensor> ys;
    for (int k = 0; k < kNumDirections; ++k) {
      const Tensor seq = select(seqs, k);
      ys.push_back(selective_scan(project_delta_b_c(seq, direction(k)), a, d, cfg_.impl));
    }
    y4 = stack(ys);
  }
  return cross_merge(y4, H, W, cfg_.merge);
}

}  // namespace cmunet::ssm
