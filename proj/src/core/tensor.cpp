#include "cmunet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace cmunet {
namespace {

thread_local bool t_grad_enabled = true;
std::atomic<bool> g_deterministic{true};

std::shared_ptr<Storage> make_storage(DType dtype, std::int64_t n) {
  auto storage = std::make_shared<Storage>();
  if (dtype == DType::kFloat32) {
    storage->values = std::vector<float>(static_cast<std::size_t>(n), 0.0f);
  } else {
    storage->values = std::vector<double>(static_cast<std::size_t>(n), 0.0);
  }
  return storage;
}

template <class T>
std::span<T> storage_span(Storage& storage) {
  auto* vec = std::get_if<std::vector<T>>(&storage.values);
  if (vec == nullptr) throw ContractError("tensor dtype mismatch on data access");
  return {vec->data(), vec->size()};
}

}  // namespace

const char* dtype_name(DType dtype) {
  return dtype == DType::kFloat32 ? "real32" : "real64";
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::empty(Shape shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  const auto n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->storage = make_storage(dtype, n);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return empty(std::move(shape), dtype); }

Tensor Tensor::ones(Shape shape, DType dtype) { return full(std::move(shape), 1.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = empty(std::move(shape), dtype);
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t = empty(std::move(shape), dtype);
  if (static_cast<std::int64_t>(values.size()) != t.numel()) {
    throw DimensionError("from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_to_string(t.shape()));
  }
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dtype);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, DType dtype, double stddev) {
  Tensor t = empty(std::move(shape), dtype);
  std::normal_distribution<double> dist(0.0, stddev);
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) v = static_cast<T>(dist(rng));
  });
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, DType dtype) {
  Tensor t = empty(std::move(shape), dtype);
  std::uniform_real_distribution<double> dist(lo, hi);
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) v = static_cast<T>(dist(rng));
  });
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

std::int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

DType Tensor::dtype() const { return impl_->dtype; }

template <class T>
std::span<T> Tensor::data() const {
  return storage_span<T>(*impl_->storage);
}

template std::span<float> Tensor::data<float>() const;
template std::span<double> Tensor::data<double>() const;

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return at(0);
}

double Tensor::at(std::int64_t i) const {
  return dispatch_dtype(dtype(), [&](auto tag) -> double {
    return static_cast<double>(data<decltype(tag)>()[static_cast<std::size_t>(i)]);
  });
}

void Tensor::set(std::int64_t i, double value) {
  dispatch_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    data<T>()[static_cast<std::size_t>(i)] = static_cast<T>(value);
  });
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  dispatch_dtype(dtype(), [&](auto tag) {
    auto d = data<decltype(tag)>();
    std::copy(d.begin(), d.end(), out.begin());
  });
  return out;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

Tensor Tensor::grad() const {
  if (!has_grad()) return Tensor();
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->storage = impl_->grad;
  return Tensor(std::move(impl));
}

template <class T>
std::span<T> Tensor::grad_data() const {
  if (!impl_->grad) impl_->grad = make_storage(impl_->dtype, numel());
  return storage_span<T>(*impl_->grad);
}

template std::span<float> Tensor::grad_data<float>() const;
template std::span<double> Tensor::grad_data<double>() const;

void Tensor::zero_grad() {
  if (impl_) impl_->grad.reset();
}

void Tensor::backward() const { cmunet::backward(*this); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->storage = std::make_shared<Storage>(*impl_->storage);
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor out = empty(shape(), target);
  dispatch_dtype(dtype(), [&](auto src_tag) {
    auto src = data<decltype(src_tag)>();
    dispatch_dtype(target, [&](auto dst_tag) {
      using D = decltype(dst_tag);
      auto dst = out.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

void Tensor::copy_from(const Tensor& other) {
  if (other.shape() != shape()) {
    throw DimensionError("copy_from: shape " + shape_to_string(other.shape()) + " into " +
                         shape_to_string(shape()));
  }
  dispatch_dtype(other.dtype(), [&](auto src_tag) {
    auto src = other.data<decltype(src_tag)>();
    dispatch_dtype(dtype(), [&](auto dst_tag) {
      using D = decltype(dst_tag);
      auto dst = data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
}

Tensor make_view(const Tensor& base, Shape shape) {
  if (shape_numel(shape) != base.numel()) {
    throw DimensionError("reshape " + shape_to_string(base.shape()) + " -> " +
                         shape_to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = base.dtype();
  impl->storage = base.impl_->storage;
  return Tensor(std::move(impl));
}

bool any_requires_grad(std::initializer_list<const Tensor*> tensors) {
  for (const Tensor* t : tensors) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void attach_backward(Tensor& out, std::vector<Tensor> inputs, const char* op, BackwardFn fn) {
  if (!grad_enabled()) return;
  bool needed = false;
  for (const auto& t : inputs) needed = needed || (t.defined() && t.requires_grad());
  if (!needed) return;
  out.impl_->requires_grad = true;
  out.impl_->parents = std::move(inputs);
  out.impl_->backward = std::move(fn);
  out.impl_->op = op;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undef>")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  visited.insert(loss.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* parent = node->parents[next++].impl();
      if (parent != nullptr && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorImpl* node : order) {
    if (node->backward) node->grad.reset();
  }
  dispatch_dtype(loss.dtype(), [&](auto tag) {
    using T = decltype(tag);
    loss.grad_data<T>()[0] += T(1);
  });

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->backward || !node->grad) continue;
    auto view = std::make_shared<TensorImpl>();
    view->shape = node->shape;
    view->dtype = node->dtype;
    view->storage = node->grad;
    node->backward(Tensor(std::move(view)));
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_deterministic(bool enabled) { g_deterministic = enabled; }
bool deterministic() { return g_deterministic; }

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " and " +
                        dtype_name(b.dtype()));
  }
}

}  // namespace cmunet
