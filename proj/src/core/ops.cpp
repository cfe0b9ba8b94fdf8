#include "cmunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmunet/kernels.hpp"
#include "cmunet/parallel.hpp"

namespace cmunet {
namespace {

std::int64_t normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) {
    throw DimensionError(std::string(op) + ": axis out of range");
  }
  return axis;
}

std::int64_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::int64_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

// Maps flat output indices to flat offsets in a broadcast operand.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& out, const Shape& in) : out_(out), strides_(out.size(), 0) {
    std::int64_t stride = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
      strides_[i] = in[i] == 1 ? 0 : stride;
      stride *= in[i];
    }
  }

  std::int64_t operator()(std::int64_t flat) const {
    std::int64_t off = 0;
    for (std::size_t i = out_.size(); i-- > 0;) {
      const std::int64_t idx = flat % out_[i];
      flat /= out_[i];
      off += idx * strides_[i];
    }
    return off;
  }

 private:
  Shape out_;
  std::vector<std::int64_t> strides_;
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_to_string(a) + " vs " +
                         shape_to_string(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_to_string(a) +
                           " with " + shape_to_string(b));
    }
  }
  return out;
}

}  // namespace

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = make_view(x, std::move(shape));
  attach_backward(out, {x}, "reshape", [x](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gx = x.grad_data<T>();
      auto go = g.data<T>();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const int nd = xs[0].ndim();
  const auto ax = static_cast<std::size_t>(normalize_axis(axis, nd, "concat"));
  Shape out_shape = xs[0].shape();
  out_shape[ax] = 0;
  for (const auto& t : xs) {
    check_same_dtype(xs[0], t, "concat");
    if (t.ndim() != nd) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < static_cast<std::size_t>(nd); ++i) {
      if (i != ax && t.shape()[i] != xs[0].shape()[i]) {
        throw DimensionError("concat: shape mismatch " + shape_to_string(t.shape()) + " vs " +
                             shape_to_string(xs[0].shape()));
      }
    }
    out_shape[ax] += t.shape()[ax];
  }
  const std::int64_t outer = prod(out_shape, 0, ax);
  const std::int64_t inner = prod(out_shape, ax + 1, out_shape.size());
  const std::int64_t out_axis = out_shape[ax];
  Tensor out = Tensor::empty(out_shape, xs[0].dtype());
  dispatch_dtype(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = out.data<T>();
    std::int64_t offset = 0;
    for (const auto& t : xs) {
      auto src = t.data<T>();
      const std::int64_t len = t.shape()[ax] * inner;
      for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(src.begin() + o * len, len, dst.begin() + o * out_axis * inner + offset);
      }
      offset += len;
    }
  });
  attach_backward(out, xs, "concat", [xs, ax, outer, inner, out_axis](const Tensor& g) {
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      std::int64_t offset = 0;
      for (const auto& t : xs) {
        const std::int64_t len = t.shape()[ax] * inner;
        if (t.requires_grad()) {
          auto gt = t.grad_data<T>();
          for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < len; ++i) {
              gt[o * len + i] += go[o * out_axis * inner + offset + i];
            }
          }
        }
        offset += len;
      }
    });
  });
  return out;
}

Tensor select(const Tensor& x, std::int64_t index) {
  if (x.ndim() < 1 || index < 0 || index >= x.dim(0)) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                         shape_to_string(x.shape()));
  }
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const std::int64_t len = shape_numel(out_shape);
  Tensor out = Tensor::empty(out_shape, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = x.data<T>();
    std::copy_n(src.begin() + index * len, len, out.data<T>().begin());
  });
  attach_backward(out, {x}, "select", [x, index, len](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gx = x.grad_data<T>();
      auto go = g.data<T>();
      for (std::int64_t i = 0; i < len; ++i) gx[index * len + i] += go[i];
    });
  });
  return out;
}

Tensor stack(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("stack: no inputs");
  for (const auto& t : xs) {
    if (t.shape() != xs[0].shape()) throw DimensionError("stack: shape mismatch");
    check_same_dtype(t, xs[0], "stack");
  }
  Shape out_shape = xs[0].shape();
  out_shape.insert(out_shape.begin(), static_cast<std::int64_t>(xs.size()));
  const std::int64_t len = xs[0].numel();
  Tensor out = Tensor::empty(out_shape, xs[0].dtype());
  dispatch_dtype(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = out.data<T>();
    for (std::size_t k = 0; k < xs.size(); ++k) {
      auto src = xs[k].data<T>();
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::int64_t>(k) * len);
    }
  });
  attach_backward(out, xs, "stack", [xs, len](const Tensor& g) {
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      for (std::size_t k = 0; k < xs.size(); ++k) {
        if (!xs[k].requires_grad()) continue;
        auto gt = xs[k].grad_data<T>();
        for (std::int64_t i = 0; i < len; ++i) gt[i] += go[static_cast<std::int64_t>(k) * len + i];
      }
    });
  });
  return out;
}

Tensor flip(const Tensor& x, int axis) {
  const auto ax = static_cast<std::size_t>(normalize_axis(axis, x.ndim(), "flip"));
  const std::int64_t outer = prod(x.shape(), 0, ax);
  const std::int64_t n = x.shape()[ax];
  const std::int64_t inner = prod(x.shape(), ax + 1, x.shape().size());
  auto mirror = [=](auto src, auto dst, bool accumulate) {
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < n; ++i) {
        const auto s = (o * n + i) * inner;
        const auto d = (o * n + (n - 1 - i)) * inner;
        for (std::int64_t k = 0; k < inner; ++k) {
          if (accumulate) {
            dst[d + k] += src[s + k];
          } else {
            dst[d + k] = src[s + k];
          }
        }
      }
    }
  };
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    mirror(x.data<T>(), out.data<T>(), false);
  });
  attach_backward(out, {x}, "flip", [x, mirror](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      mirror(g.data<T>(), x.grad_data<T>(), true);
    });
  });
  return out;
}

// ---- dense -----------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2 || x.ndim() < 1 || x.dim(-1) != w.dim(1)) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + " vs weight " +
                         shape_to_string(w.shape()));
  }
  check_same_dtype(x, w, "linear");
  const std::int64_t cin = w.dim(1);
  const std::int64_t cout = w.dim(0);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout)) {
    throw DimensionError("linear: bias shape " + shape_to_string(b.shape()));
  }
  const std::int64_t rows = x.numel() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor out = Tensor::empty(out_shape, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* y = out.data<T>().data();
    kernels::gemm_nt<T>(rows, cout, cin, x.data<T>().data(), w.data<T>().data(), y, false);
    if (b.defined()) {
      auto bias = b.data<T>();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < cout; ++j) y[r * cout + j] += bias[j];
      }
    }
  });
  attach_backward(out, {x, w, b}, "linear", [x, w, b, rows, cin, cout](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* go = g.data<T>().data();
      if (x.requires_grad()) {
        kernels::gemm_nn<T>(rows, cin, cout, go, w.data<T>().data(), x.grad_data<T>().data(),
                            true);
      }
      if (w.requires_grad()) {
        kernels::gemm_tn<T>(cout, cin, rows, go, x.data<T>().data(), w.grad_data<T>().data(),
                            true);
      }
      if (b.defined() && b.requires_grad()) {
        auto gb = b.grad_data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < cout; ++j) gb[j] += go[r * cout + j];
        }
      }
    });
  });
  return out;
}

// ---- pointwise -------------------------------------------------------------

namespace {

template <class T>
T stable_sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
T stable_softplus(T v) {
  if (v > T(20)) return v;
  return std::log1p(std::exp(v));
}

Tensor softmax_axis1(const Tensor& x) {
  if (x.ndim() < 2) throw DimensionError("softmax_channel: needs a channel axis");
  const std::int64_t outer = x.dim(0);
  const std::int64_t channels = x.dim(1);
  const std::int64_t inner = x.numel() / (outer * channels);
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    const bool par = outer * channels * inner > kParallelGrain;
#pragma omp parallel for collapse(2) schedule(static) if (par)
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t p = 0; p < inner; ++p) {
        const std::int64_t base = o * channels * inner + p;
        T mx = in[base];
        for (std::int64_t c = 1; c < channels; ++c) mx = std::max(mx, in[base + c * inner]);
        T total = 0;
        for (std::int64_t c = 0; c < channels; ++c) {
          const T e = std::exp(in[base + c * inner] - mx);
          y[base + c * inner] = e;
          total += e;
        }
        for (std::int64_t c = 0; c < channels; ++c) y[base + c * inner] /= total;
      }
    }
  });
  Tensor y_saved = out.detach();
  attach_backward(out, {x}, "softmax_channel",
                  [x, y_saved, outer, channels, inner](const Tensor& g) {
                    dispatch_dtype(x.dtype(), [&](auto tag) {
                      using T = decltype(tag);
                      auto y = y_saved.data<T>();
                      auto go = g.data<T>();
                      auto gx = x.grad_data<T>();
                      for (std::int64_t o = 0; o < outer; ++o) {
                        for (std::int64_t p = 0; p < inner; ++p) {
                          const std::int64_t base = o * channels * inner + p;
                          T dot = 0;
                          for (std::int64_t c = 0; c < channels; ++c) {
                            dot += go[base + c * inner] * y[base + c * inner];
                          }
                          for (std::int64_t c = 0; c < channels; ++c) {
                            const auto i = base + c * inner;
                            gx[i] += y[i] * (go[i] - dot);
                          }
                        }
                      }
                    });
                  });
  return out;
}

}  // namespace

Tensor activation(Activation kind, const Tensor& x) {
  if (kind == Activation::kSoftmaxChannel) return softmax_axis1(x);
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  const std::int64_t n = x.numel();
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>().data();
    T* y = out.data<T>().data();
    const bool par = n > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < n; ++i) {
      const T v = in[i];
      switch (kind) {
        case Activation::kSilu: y[i] = v * stable_sigmoid(v); break;
        case Activation::kRelu: y[i] = v > T(0) ? v : T(0); break;
        case Activation::kSigmoid: y[i] = stable_sigmoid(v); break;
        case Activation::kSoftplus: y[i] = stable_softplus(v); break;
        case Activation::kExp: y[i] = std::exp(v); break;
        case Activation::kSoftmaxChannel: break;
      }
    }
  });
  Tensor y_saved = out.detach();
  attach_backward(out, {x}, "activation", [x, y_saved, kind, n](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* in = x.data<T>().data();
      const T* y = y_saved.data<T>().data();
      const T* go = g.data<T>().data();
      T* gx = x.grad_data<T>().data();
      const bool par = n > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
      for (std::int64_t i = 0; i < n; ++i) {
        T d = 0;
        switch (kind) {
          case Activation::kSilu: {
            const T s = stable_sigmoid(in[i]);
            d = s * (T(1) + in[i] * (T(1) - s));
            break;
          }
          case Activation::kRelu: d = in[i] > T(0) ? T(1) : T(0); break;
          case Activation::kSigmoid: d = y[i] * (T(1) - y[i]); break;
          case Activation::kSoftplus: d = stable_sigmoid(in[i]); break;
          case Activation::kExp: d = y[i]; break;
          case Activation::kSoftmaxChannel: break;
        }
        gx[i] += go[i] * d;
      }
    });
  });
  return out;
}

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "elementwise");
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), "elementwise");
  const bool a_full = a.shape() == out_shape;
  const bool b_full = b.shape() == out_shape;
  const std::int64_t n = shape_numel(out_shape);
  const BroadcastIndex ia(out_shape, a.shape());
  const BroadcastIndex ib(out_shape, b.shape());
  Tensor out = Tensor::empty(out_shape, a.dtype());
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>().data();
    const T* pb = b.data<T>().data();
    T* y = out.data<T>().data();
    const bool par = n > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < n; ++i) {
      const T va = a_full ? pa[i] : pa[ia(i)];
      const T vb = b_full ? pb[i] : pb[ib(i)];
      switch (kind) {
        case Elementwise::kAdd: y[i] = va + vb; break;
        case Elementwise::kSub: y[i] = va - vb; break;
        case Elementwise::kMul: y[i] = va * vb; break;
      }
    }
  });
  attach_backward(out, {a, b}, "elementwise",
                  [a, b, kind, n, a_full, b_full, ia, ib](const Tensor& g) {
    dispatch_dtype(a.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* go = g.data<T>().data();
      const T* pa = a.data<T>().data();
      const T* pb = b.data<T>().data();
      auto grad_for = [&](const Tensor& target, bool full, const BroadcastIndex& idx,
                          bool is_a) {
        if (!target.requires_grad()) return;
        T* gt = target.grad_data<T>().data();
        auto term = [&](std::int64_t i) -> T {
          switch (kind) {
            case Elementwise::kAdd: return go[i];
            case Elementwise::kSub: return is_a ? go[i] : -go[i];
            case Elementwise::kMul: {
              const T other = is_a ? (b_full ? pb[i] : pb[ib(i)]) : (a_full ? pa[i] : pa[ia(i)]);
              return go[i] * other;
            }
          }
          return T(0);
        };
        if (full) {
          const bool par = n > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
          for (std::int64_t i = 0; i < n; ++i) gt[i] += term(i);
        } else {
          for (std::int64_t i = 0; i < n; ++i) gt[idx(i)] += term(i);
        }
      };
      grad_for(a, a_full, ia, true);
      grad_for(b, b_full, ib, false);
    });
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    for (std::size_t i = 0; i < in.size(); ++i) y[i] = in[i] * static_cast<T>(factor);
  });
  attach_backward(out, {x}, "scale", [x, factor](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      auto gx = x.grad_data<T>();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * static_cast<T>(factor);
    });
  });
  return out;
}

Tensor channel_reduce(const Tensor& x, ChannelReduce kind) {
  if (x.ndim() != 4) throw DimensionError("channel_reduce: expects NCHW");
  const std::int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::empty({batch, 1, x.dim(2), x.dim(3)}, x.dtype());
  std::vector<std::int64_t> argmax;
  if (kind == ChannelReduce::kMax) argmax.resize(static_cast<std::size_t>(batch * hw));
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto y = out.data<T>();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const std::int64_t base = b * channels * hw + p;
        if (kind == ChannelReduce::kMean) {
          T acc = 0;
          for (std::int64_t c = 0; c < channels; ++c) acc += in[base + c * hw];
          y[b * hw + p] = acc / static_cast<T>(channels);
        } else {
          std::int64_t best = 0;
          for (std::int64_t c = 1; c < channels; ++c) {
            if (in[base + c * hw] > in[base + best * hw]) best = c;
          }
          argmax[b * hw + p] = best;
          y[b * hw + p] = in[base + best * hw];
        }
      }
    }
  });
  attach_backward(out, {x}, "channel_reduce",
                  [x, kind, batch, channels, hw, argmax = std::move(argmax)](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto go = g.data<T>();
      auto gx = x.grad_data<T>();
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t p = 0; p < hw; ++p) {
          const std::int64_t base = b * channels * hw + p;
          const T gv = go[b * hw + p];
          if (kind == ChannelReduce::kMean) {
            for (std::int64_t c = 0; c < channels; ++c) {
              gx[base + c * hw] += gv / static_cast<T>(channels);
            }
          } else {
            gx[base + argmax[b * hw + p] * hw] += gv;
          }
        }
      }
    });
  });
  return out;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0;
  dispatch_dtype(x.dtype(), [&](auto tag) {
    for (auto v : x.data<decltype(tag)>()) acc += static_cast<double>(v);
  });
  Tensor out = Tensor::scalar(acc, x.dtype());
  attach_backward(out, {x}, "sum", [x](const Tensor& g) {
    dispatch_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T gv = g.data<T>()[0];
      for (auto& v : x.grad_data<T>()) v += gv;
    });
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace cmunet
