#include <cmath>

#include "cmunet/ops.hpp"
#include "cmunet/ssm.hpp"

namespace cmunet::ssm {

SsmParams::SsmParams(std::int64_t inner_dim, std::int64_t state_size, DType dtype,
                     std::mt19937_64& rng, const SsmInit& init, bool with_state)
    : Module(dtype), inner_dim_(inner_dim), state_size_(state_size) {
  if (inner_dim < 1 || state_size < 1) {
    throw ConfigError("ssm: inner_dim and state_size must be positive");
  }
  if (with_state) {
    a_log = register_parameter("a_log", initial_a_log(inner_dim, state_size, dtype));
    d_skip = register_parameter("d_skip", Tensor::ones({inner_dim}, dtype));
  }

  const double bound = 1.0 / std::sqrt(static_cast<double>(inner_dim));
  delta_weight = register_parameter(
      "delta_weight", Tensor::uniform({inner_dim, inner_dim}, rng, -bound, bound, dtype));
  // softplus(bias) is log-uniform in [delta_min, delta_max].
  std::uniform_real_distribution<double> u(std::log(init.delta_min), std::log(init.delta_max));
  std::vector<double> bias(static_cast<std::size_t>(inner_dim));
  for (auto& v : bias) v = std::log(std::expm1(std::exp(u(rng))));
  delta_bias = register_parameter("delta_bias", Tensor::from_values({inner_dim}, bias, dtype));
  b_weight = register_parameter(
      "b_weight", Tensor::uniform({state_size, inner_dim}, rng, -bound, bound, dtype));
  c_weight = register_parameter(
      "c_weight", Tensor::uniform({state_size, inner_dim}, rng, -bound, bound, dtype));
}

Tensor initial_a_log(std::int64_t inner_dim, std::int64_t state_size, DType dtype) {
  std::vector<double> values(static_cast<std::size_t>(inner_dim * state_size));
  for (std::int64_t d = 0; d < inner_dim; ++d) {
    for (std::int64_t n = 0; n < state_size; ++n) {
      values[static_cast<std::size_t>(d * state_size + n)] = std::log(static_cast<double>(n + 1));
    }
  }
  return Tensor::from_values({inner_dim, state_size}, values, dtype);
}

Tensor SsmParams::a_matrix() const {
  if (!a_log.defined()) throw ContractError("SsmParams: constructed without a state matrix");
  return scale(exp(a_log), -1.0);
}

ScanInputs project_delta_b_c(const Tensor& x, const SsmParams& params) {
  if (x.ndim() != 3 || x.dim(2) != params.inner_dim()) {
    throw DimensionError("project_delta_b_c: expected [B, L, " +
                         std::to_string(params.inner_dim()) + "], got " +
                         shape_to_string(x.shape()));
  }
  ScanInputs in;
  in.x = x;
  in.delta = softplus(linear(x, params.delta_weight, params.delta_bias));
  in.b_sel = linear(x, params.b_weight);
  in.c_sel = linear(x, params.c_weight);
  return in;
}

namespace {

void validate(const ScanInputs& in, const Tensor& a, const Tensor& d) {
  if (in.x.ndim() != 3) throw DimensionError("selective_scan: x must be [B, L, D]");
  const auto B = in.x.dim(0), L = in.x.dim(1), D = in.x.dim(2);
  if (a.ndim() != 2 || a.dim(0) != D) throw DimensionError("selective_scan: a must be [D, N]");
  const auto N = a.dim(1);
  if (in.delta.shape() != in.x.shape()) throw DimensionError("selective_scan: delta shape");
  const Shape bn{B, L, N};
  if (in.b_sel.shape() != bn || in.c_sel.shape() != bn) {
    throw DimensionError("selective_scan: B/C must be " + shape_to_string(bn));
  }
  if (d.shape() != Shape{D}) throw DimensionError("selective_scan: d must be [D]");
  for (const Tensor* t : {&in.delta, &in.b_sel, &in.c_sel, &a, &d}) {
    check_same_dtype(in.x, *t, "selective_scan");
  }
}

template <class T>
T* grad_ptr(const Tensor& t) {
  return t.requires_grad() ? t.grad_data<T>().data() : nullptr;
}

}  // namespace

Tensor selective_scan(const ScanInputs& inputs, const Tensor& a, const Tensor& d, ScanImpl impl) {
  validate(inputs, a, d);
  const ScanDims dims{inputs.x.dim(0), inputs.x.dim(1), inputs.x.dim(2), a.dim(1)};
  Tensor out = Tensor::empty(inputs.x.shape(), inputs.x.dtype());
  dispatch_dtype(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const ScanBuffers<T> buf{inputs.x.data<T>().data(),     inputs.delta.data<T>().data(),
                             a.data<T>().data(),            inputs.b_sel.data<T>().data(),
                             inputs.c_sel.data<T>().data(), d.data<T>().data()};
    if (impl == ScanImpl::kSequential) {
      scan_forward_seq(dims, buf, out.data<T>().data());
    } else {
      scan_forward_parallel(dims, buf, out.data<T>().data());
    }
  });
  const ScanInputs in = inputs;
  attach_backward(out, {in.x, in.delta, in.b_sel, in.c_sel, a, d}, "selective_scan",
                  [in, a, d, dims, impl](const Tensor& g) {
                    dispatch_dtype(g.dtype(), [&](auto tag) {
                      using T = decltype(tag);
                      const ScanBuffers<T> buf{in.x.data<T>().data(),     in.delta.data<T>().data(),
                                               a.data<T>().data(),        in.b_sel.data<T>().data(),
                                               in.c_sel.data<T>().data(), d.data<T>().data()};
                      const ScanGradBuffers<T> grads{grad_ptr<T>(in.x),     grad_ptr<T>(in.delta),
                                                     grad_ptr<T>(a),        grad_ptr<T>(in.b_sel),
                                                     grad_ptr<T>(in.c_sel), grad_ptr<T>(d)};
                      if (impl == ScanImpl::kSequential) {
                        scan_backward_seq(dims, buf, g.data<T>().data(), grads);
                      } else {
                        scan_backward_parallel(dims, buf, g.data<T>().data(), grads);
                      }
                    });
                  });
  return out;
}

Tensor selective_scan_seq(const ScanInputs& inputs, const SsmParams& params) {
  return selective_scan(inputs, params.a_matrix(), params.d_skip, ScanImpl::kSequential);
}

Tensor selective_scan_parallel(const ScanInputs& inputs, const SsmParams& params) {
  return selective_scan(inputs, params.a_matrix(), params.d_skip, ScanImpl::kParallel);
}

}  // namespace cmunet::ssm
