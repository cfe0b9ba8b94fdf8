#include "cmunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cmunet {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (h <= 0) throw ContractError("finite_diff_grad: h must be positive");
  Tensor probe = x.clone();
  Tensor grad = Tensor::zeros(x.shape(), x.dtype());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = probe.at(i);
    probe.set(i, v + h);
    const double up = f(probe);
    probe.set(i, v - h);
    const double down = f(probe);
    probe.set(i, v);
    grad.set(i, (up - down) / (2 * h));
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double fd_resolution(double loss_value, double h) {
  return kFdRoundoffUlps * std::numeric_limits<double>::epsilon() *
         std::max(1.0, std::abs(loss_value)) / h;
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<NamedTensor>& wrt, int probes, double h,
                                std::mt19937_64& rng) {
  GradCheckResult result;
  if (wrt.empty()) return result;
  for (const auto& t : wrt) {
    Tensor handle = t.tensor;
    handle.zero_grad();
    if (!handle.requires_grad()) handle.set_requires_grad(true);
  }
  Tensor loss = loss_fn();
  backward(loss);
  result.resolution = fd_resolution(loss.item(), h);

  // Spread probes across tensors round-robin, random element within each.
  for (int p = 0; p < probes; ++p) {
    const auto& target = wrt[static_cast<std::size_t>(p) % wrt.size()];
    Tensor t = target.tensor;
    std::uniform_int_distribution<std::int64_t> pick(0, t.numel() - 1);
    const std::int64_t idx = pick(rng);
    const double analytic = t.has_grad() ? t.grad().at(idx) : 0.0;
    const double v = t.at(idx);
    double up = 0, down = 0;
    {
      NoGradGuard guard;
      t.set(idx, v + h);
      up = loss_fn().item();
      t.set(idx, v - h);
      down = loss_fn().item();
      t.set(idx, v);
    }
    const double numeric = (up - down) / (2 * h);
    const double err = std::abs(analytic - numeric) <= result.resolution
                           ? 0.0
                           : relative_error(analytic, numeric);
    ++result.probes;
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      std::ostringstream os;
      os.precision(10);
      os << target.name << '[' << idx << "]: analytic " << analytic << " vs numeric " << numeric;
      result.worst = os.str();
    }
  }
  return result;
}

}  // namespace cmunet
