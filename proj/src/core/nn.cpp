#include "cmunet/nn.hpp"

#include <cmath>
#include <unordered_set>

namespace cmunet {

Tensor Module::register_parameter(std::string name, Tensor value) {
  for (const auto& p : params_) {
    if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  value.set_requires_grad(true);
  params_.push_back({std::move(name), value});
  return value;
}

Tensor Module::register_buffer(std::string name, Tensor value) {
  buffers_.push_back({std::move(name), value});
  return value;
}

void Module::collect(const std::string& prefix, bool buffers, std::vector<NamedTensor>& out) const {
  for (const auto& p : buffers ? buffers_ : params_) out.push_back({prefix + p.name, p.tensor});
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", buffers, out);
}

std::vector<NamedTensor> Module::named_parameters() const {
  std::vector<NamedTensor> out;
  collect("", false, out);
  return out;
}

std::vector<NamedTensor> Module::named_buffers() const {
  std::vector<NamedTensor> out;
  collect("", true, out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

void Module::set_training(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->set_training(training);
}

void Module::zero_grad() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

std::int64_t count_parameters(const Module& module) {
  std::int64_t total = 0;
  for (const auto& p : module.named_parameters()) total += p.tensor.numel();
  return total;
}

Conv2d::Conv2d(const Conv2dSpec& spec, DType dtype, std::mt19937_64& rng)
    : Module(dtype), spec_(spec) {
  const std::int64_t fan_in = spec.in_channels / spec.groups * spec.kernel * spec.kernel;
  weight = register_parameter(
      "weight", Tensor::randn({spec.out_channels, spec.in_channels / spec.groups, spec.kernel,
                               spec.kernel},
                              rng, dtype, std::sqrt(spec.gain / static_cast<double>(fan_in))));
  if (spec.bias) bias = register_parameter("bias", Tensor::zeros({spec.out_channels}, dtype));
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, {spec_.stride, spec_.padding, spec_.groups});
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features, bool with_bias, DType dtype,
               std::mt19937_64& rng)
    : Module(dtype) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = register_parameter("weight",
                              Tensor::uniform({out_features, in_features}, rng, -bound, bound, dtype));
  if (with_bias) bias = register_parameter("bias", Tensor::zeros({out_features}, dtype));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

LayerNorm::LayerNorm(std::int64_t channels, int axis, DType dtype, double eps)
    : Module(dtype), axis_(axis), eps_(eps) {
  gamma = register_parameter("weight", Tensor::ones({channels}, dtype));
  beta = register_parameter("bias", Tensor::zeros({channels}, dtype));
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps_, axis_); }

BatchNorm2d::BatchNorm2d(std::int64_t channels, DType dtype, double momentum, double eps)
    : Module(dtype), momentum_(momentum), eps_(eps) {
  gamma = register_parameter("weight", Tensor::ones({channels}, dtype));
  beta = register_parameter("bias", Tensor::zeros({channels}, dtype));
  running_mean = register_buffer("running_mean", Tensor::zeros({channels}, dtype));
  running_var = register_buffer("running_var", Tensor::ones({channels}, dtype));
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training(), momentum_, eps_);
}

}  // namespace cmunet
