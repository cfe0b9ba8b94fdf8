#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cmunet/errors.hpp"

namespace cmunet {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Calls fn(float{}) or fn(double{}) so kernels can be written once as
// `dispatch_dtype(t.dtype(), [&](auto tag) { using T = decltype(tag); ... })`.
template <class F>
decltype(auto) dispatch_dtype(DType dtype, F&& fn) {
  if (dtype == DType::kFloat32) return fn(float{});
  return fn(double{});
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

struct Storage {
  std::variant<std::vector<float>, std::vector<double>> values;
};

class Tensor;
struct TensorImpl;

using BackwardFn = std::function<void(const Tensor& grad_output)>;

// Reference-counted handle to a dense row-major array. Copies of a Tensor
// alias the same node; clone() makes an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Shape shape, DType dtype = DType::kFloat32);
  static Tensor zeros(Shape shape, DType dtype = DType::kFloat32);
  static Tensor ones(Shape shape, DType dtype = DType::kFloat32);
  static Tensor full(Shape shape, double value, DType dtype = DType::kFloat32);
  static Tensor scalar(double value, DType dtype = DType::kFloat32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::kFloat32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::kFloat32);
  static Tensor randn(Shape shape, std::mt19937_64& rng,
                      DType dtype = DType::kFloat32, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                        DType dtype = DType::kFloat32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const;
  std::int64_t numel() const;
  DType dtype() const;

  template <class T>
  std::span<T> data() const;

  double item() const;
  double at(std::int64_t flat_index) const;
  void set(std::int64_t flat_index, double value);
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  // Gradient as a graph-free tensor sharing the gradient buffer.
  Tensor grad() const;
  // Mutable gradient buffer, allocated as zeros on first access.
  template <class T>
  std::span<T> grad_data() const;
  void zero_grad();
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;
  // Overwrites values in place; shapes must match. Never recorded.
  void copy_from(const Tensor& other);

  TensorImpl* impl() const { return impl_.get(); }
  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_view(const Tensor& base, Shape shape);
  friend void attach_backward(Tensor& out, std::vector<Tensor> inputs,
                              const char* op, BackwardFn fn);
  friend void backward(const Tensor& loss);
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::kFloat32;
  std::shared_ptr<Storage> storage;
  bool requires_grad = false;
  std::shared_ptr<Storage> grad;
  std::vector<Tensor> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

// Reverse-mode accumulation from a scalar. Leaf gradients accumulate across
// calls; intermediate gradients are reset at the start of each call.
void backward(const Tensor& loss);

// A tensor sharing `base`'s storage with a different shape (same numel).
Tensor make_view(const Tensor& base, Shape shape);

// Records `fn` as the backward of `out` when grad mode is on and any input
// requires a gradient. `fn` must not capture `out` itself.
void attach_backward(Tensor& out, std::vector<Tensor> inputs, const char* op,
                     BackwardFn fn);

bool any_requires_grad(std::initializer_list<const Tensor*> tensors);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Deterministic mode fixes the blocking of every reduction independently of
// the thread count. Kernels that never vary with thread count ignore it.
void set_deterministic(bool enabled);
bool deterministic();

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace cmunet
