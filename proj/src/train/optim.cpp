#include "cmunet/optim.hpp"

#include <cmath>
#include <numbers>

namespace cmunet {

AdamW::AdamW(std::vector<NamedTensor> params, const AdamWConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
  }
  for (const auto& p : params_) decay_.push_back(decays(p.name));
}

bool AdamW::decays(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name != name) continue;
    const bool log_state = name.size() >= 5 && name.compare(name.size() - 5, 5, "a_log") == 0;
    return p.tensor.ndim() >= 2 && !log_state;
  }
  return false;
}

void AdamW::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const double wd = decay_[i] ? cfg_.weight_decay : 0.0;
    dispatch_dtype(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto w = p.data<T>();
      auto g = p.grad_data<T>();
      auto m = m_[i].data<T>();
      auto v = v_[i].data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
        w[j] = static_cast<T>(w[j] * (1 - lr * wd) - lr * update);
      }
    });
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<NamedTensor> AdamW::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam.m." + params_[i].name, m_[i]});
    out.push_back({"adam.v." + params_[i].name, v_[i]});
  }
  return out;
}

double cosine_lr(double base, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return base;
  const double t = static_cast<double>(std::min(step, total_steps - 1)) /
                   static_cast<double>(total_steps - 1);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace cmunet
