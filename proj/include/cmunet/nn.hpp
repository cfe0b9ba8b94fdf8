#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cmunet/ops.hpp"
#include "cmunet/tensor.hpp"

namespace cmunet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Parameter/buffer registry with dotted hierarchical names.
class Module {
 public:
  explicit Module(DType dtype) : dtype_(dtype) {}
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<NamedTensor> named_buffers() const;
  std::vector<Tensor> parameters() const;
  const std::vector<std::pair<std::string, std::shared_ptr<Module>>>& children() const {
    return children_;
  }

  void set_training(bool training);
  bool training() const { return training_; }
  void zero_grad();
  DType dtype() const { return dtype_; }

 protected:
  Tensor register_parameter(std::string name, Tensor value);
  Tensor register_buffer(std::string name, Tensor value);

  template <class M>
  std::shared_ptr<M> register_module(std::string name, std::shared_ptr<M> module) {
    children_.emplace_back(std::move(name), module);
    return module;
  }

 private:
  void collect(const std::string& prefix, bool buffers, std::vector<NamedTensor>& out) const;

  DType dtype_;
  bool training_ = true;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
};

std::int64_t count_parameters(const Module& module);

// ---- layers ----------------------------------------------------------------

struct Conv2dSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
  bool bias = true;
  // Weight variance is gain / fan_in: 2 suits a following ReLU, 1 otherwise.
  double gain = 2.0;
};

// Fan-in scaled normal initialization, zero bias.
class Conv2d : public Module {
 public:
  Conv2d(const Conv2dSpec& spec, DType dtype, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  const Conv2dSpec& spec() const { return spec_; }
  Tensor weight;
  Tensor bias;

 private:
  Conv2dSpec spec_;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in_features, std::int64_t out_features, bool bias, DType dtype,
         std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  Tensor weight;
  Tensor bias;
};

class LayerNorm : public Module {
 public:
  LayerNorm(std::int64_t channels, int axis, DType dtype, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;
  Tensor gamma;
  Tensor beta;

 private:
  int axis_;
  double eps_;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d(std::int64_t channels, DType dtype, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x);
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  double momentum_;
  double eps_;
};

}  // namespace cmunet
