#include <doctest.h>

#include <cmath>
#include <random>

#include "cmunet/gradcheck.hpp"
#include "cmunet/kernels.hpp"
#include "cmunet/nn.hpp"
#include "cmunet/ops.hpp"
#include "cmunet/reference.hpp"
#include "oracles.hpp"

using namespace cmunet;

namespace {

constexpr DType f64 = DType::kFloat64;

double max_abs_diff(const Tensor& t, const std::vector<long double>& ref) {
  REQUIRE(static_cast<std::size_t>(t.numel()) == ref.size());
  double m = 0;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    m = std::max(m, static_cast<double>(std::abs(t.at(i) - ref[static_cast<std::size_t>(i)])));
  }
  return m;
}

}  // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("factories and element access") {
  const Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, f64);
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.at(4) == 5.0);
  CHECK(Tensor::zeros({3}).to_vector() == std::vector<double>{0, 0, 0});
  CHECK(Tensor::full({2}, 2.5, f64).at(1) == 2.5);
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), DimensionError);
  Tensor c = t.clone();
  c.set(0, 9);
  CHECK(t.at(0) == 1.0);
  CHECK(t.to(DType::kFloat32).dtype() == DType::kFloat32);
}

TEST_CASE("backward of sum(w*x) is x and of sum(w^2)/2 is w") {
  std::mt19937_64 rng(1);
  Tensor w = Tensor::randn({4, 3}, rng, f64);
  w.set_requires_grad(true);
  const Tensor x = Tensor::randn({4, 3}, rng, f64);
  backward(sum(mul(w, x)));
  for (std::int64_t i = 0; i < 12; ++i) CHECK(w.grad().at(i) == doctest::Approx(x.at(i)));
  w.zero_grad();
  backward(scale(sum(mul(w, w)), 0.5));
  for (std::int64_t i = 0; i < 12; ++i) CHECK(w.grad().at(i) == doctest::Approx(w.at(i)));
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor w = Tensor::from_values({2}, {1.0, 2.0}, f64);
  w.set_requires_grad(true);
  backward(sum(w));
  backward(sum(w));
  CHECK(w.grad().at(0) == 2.0);
}

TEST_CASE("non-scalar backward is a contract error") {
  Tensor w = Tensor::ones({2}, f64);
  w.set_requires_grad(true);
  CHECK_THROWS_AS(backward(scale(w, 2.0)), ContractError);
}

TEST_CASE("mixed dtypes are rejected") {
  CHECK_THROWS_AS(add(Tensor::ones({2}, f64), Tensor::ones({2})), ContractError);
}

TEST_CASE("finite_diff_grad basics") {
  const Tensor x = Tensor::from_values({3}, {1, -2, 5}, f64);
  const Tensor g = finite_diff_grad([](const Tensor& t) { return sum(t).item(); }, x, 1e-5);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(g.at(i) == doctest::Approx(1.0).epsilon(1e-9));
  const Tensor three = Tensor::scalar(3.0, f64);
  const Tensor d = finite_diff_grad(
      [](const Tensor& t) { return t.item() * t.item(); }, three, 1e-5);
  CHECK(std::abs(d.item() - 6.0) < 1e-8);
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), ContractError);
}

TEST_CASE("silu(linear(conv)) pipeline matches finite differences") {
  std::mt19937_64 rng(2);
  Tensor x = Tensor::randn({1, 2, 5, 5}, rng, f64);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng, f64, 0.4);
  Tensor lw = Tensor::randn({4, 5}, rng, f64);
  for (Tensor* t : {&x, &w, &lw}) t->set_requires_grad(true);
  auto loss = [&] { return sum(silu(linear(conv2d(x, w, {}, {1, 1, 1}), lw))); };
  const auto r = check_gradients(loss, {{"x", x}, {"w", w}, {"lw", lw}}, 30, 1e-5, rng);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("gemm variants match the serial reference") {
  std::mt19937_64 rng(3);
  const std::int64_t m = 7, n = 9, k = 5;
  const Tensor a = Tensor::randn({m, k}, rng, f64), b = Tensor::randn({k, n}, rng, f64);
  const Tensor at = Tensor::randn({k, m}, rng, f64), bt = Tensor::randn({n, k}, rng, f64);
  std::vector<double> c(m * n), ref(m * n);
  kernels::gemm_nn<double>(m, n, k, a.data<double>().data(), b.data<double>().data(), c.data(), false);
  reference::matmul<double>(m, n, k, a.data<double>().data(), b.data<double>().data(), ref.data());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]));
  // nt: A * Bt^T, tn: At^T * B, both against explicit loops.
  kernels::gemm_nt<double>(m, n, k, a.data<double>().data(), bt.data<double>().data(), c.data(), false);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::int64_t p = 0; p < k; ++p) s += a.at(i * k + p) * bt.at(j * k + p);
      CHECK(c[i * n + j] == doctest::Approx(s));
    }
  kernels::gemm_tn<double>(m, n, k, at.data<double>().data(), b.data<double>().data(), c.data(), false);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::int64_t p = 0; p < k; ++p) s += at.at(p * m + i) * b.at(p * n + j);
      CHECK(c[i * n + j] == doctest::Approx(s));
    }
}

TEST_CASE("conv2d matches the direct loop oracle and the reference kernel") {
  std::mt19937_64 rng(4);
  struct Case {
    Shape x, w;
    Conv2dOptions o;
  };
  for (const Case& c : {Case{{2, 3, 9, 9}, {4, 3, 3, 3}, {1, 1, 1}},
                        Case{{1, 4, 8, 8}, {6, 2, 3, 3}, {2, 1, 2}},
                        Case{{1, 3, 16, 16}, {5, 3, 7, 7}, {2, 3, 1}},
                        Case{{2, 6, 5, 5}, {6, 1, 5, 5}, {1, 2, 6}}}) {
    const Tensor x = Tensor::randn(c.x, rng, f64), w = Tensor::randn(c.w, rng, f64);
    const Tensor b = Tensor::randn({c.w[0]}, rng, f64);
    const Tensor y = conv2d(x, w, b, c.o);
    CHECK(max_abs_diff(y, oracle::conv2d(x, w, b, c.o.stride, c.o.padding, c.o.groups)) < 1e-12);
    const auto g = make_conv_geometry(c.x[0], c.x[1], c.x[2], c.x[3], c.w[0], c.w[2], c.w[3],
                                      c.o.stride, c.o.padding, c.o.groups);
    std::vector<double> ref(static_cast<std::size_t>(y.numel()));
    reference::conv2d_forward<double>(g, x.data<double>().data(), w.data<double>().data(),
                                      b.data<double>().data(), ref.data());
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(ref[i]));
  }
}

TEST_CASE("depthwise conv equals independent single-channel convolutions") {
  std::mt19937_64 rng(5);
  const Tensor x = Tensor::randn({1, 3, 6, 6}, rng, f64), w = Tensor::randn({3, 1, 3, 3}, rng, f64);
  const Tensor y = conv2d(x, w, {}, {1, 1, 3});
  for (std::int64_t c = 0; c < 3; ++c) {
    const Tensor xc = reshape(select(reshape(x, {3, 1, 1, 6, 6}), c), {1, 1, 6, 6});
    const Tensor wc = reshape(select(w, c), {1, 1, 3, 3});
    const Tensor yc = conv2d(xc, wc, {}, {1, 1, 1});
    for (std::int64_t i = 0; i < 36; ++i) CHECK(y.at(c * 36 + i) == yc.at(i));
  }
}

TEST_CASE("conv2d rejects incompatible shapes") {
  const Tensor x = Tensor::zeros({1, 3, 4, 4}), w = Tensor::zeros({2, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, {}, {1, 1, 1}), DimensionError);
}

TEST_CASE("max pooling routes gradient to the first maximum") {
  Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 1, 1, 1}, f64);
  x.set_requires_grad(true);
  backward(sum(pool2d(x, PoolKind::kMax, 2, 2, 0)));
  CHECK(x.grad().to_vector() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("softmax over channels sums to one") {
  std::mt19937_64 rng(6);
  const Tensor s = softmax_channel(Tensor::randn({2, 5, 3, 3}, rng, DType::kFloat32, 4.0));
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t p = 0; p < 9; ++p) {
      double acc = 0;
      for (std::int64_t c = 0; c < 5; ++c) acc += s.at((b * 5 + c) * 9 + p);
      CHECK(std::abs(acc - 1.0) < 1e-6);
    }
}

TEST_CASE("layer norm with unit affine standardizes") {
  std::mt19937_64 rng(7);
  const Tensor x = Tensor::randn({3, 4, 2, 2}, rng, f64, 3.0);
  const Tensor y = layer_norm(x, Tensor::ones({4}, f64), Tensor::zeros({4}, f64), 1e-5, 1);
  for (std::int64_t b = 0; b < 3; ++b)
    for (std::int64_t p = 0; p < 4; ++p) {
      double m = 0;
      for (std::int64_t c = 0; c < 4; ++c) m += y.at((b * 4 + c) * 4 + p);
      CHECK(std::abs(m / 4) < 1e-6);
    }
}

TEST_CASE("broadcasting follows singleton dims") {
  const Tensor a = Tensor::from_values({1, 2, 1, 2}, {1, 2, 3, 4}, f64);
  const Tensor b = Tensor::from_values({1, 2, 1, 1}, {10, 20}, f64);
  CHECK(add(a, b).to_vector() == std::vector<double>{11, 12, 23, 24});
  CHECK_THROWS_AS(add(a, Tensor::zeros({1, 3, 1, 1}, f64)), DimensionError);
}

TEST_CASE("resize to the same size is the identity") {
  std::mt19937_64 rng(8);
  const Tensor x = Tensor::randn({1, 2, 5, 7}, rng, f64);
  const Tensor y = resize(x, 5, 7);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)));
}

TEST_CASE("bilinear 2x upsampling of a constant stays constant") {
  const Tensor y = resize(Tensor::full({1, 1, 3, 3}, 2.0, f64), 6, 6);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(2.0));
}

TEST_CASE("ops are bitwise reproducible in deterministic mode") {
  set_deterministic(true);
  std::mt19937_64 rng(9);
  const Tensor x = Tensor::randn({2, 8, 16, 16}, rng), w = Tensor::randn({8, 8, 3, 3}, rng);
  const Tensor a = conv2d(x, w, {}, {1, 1, 1}), b = conv2d(x, w, {}, {1, 1, 1});
  CHECK(a.to_vector() == b.to_vector());
}

TEST_CASE("module registry names nest with dots") {
  std::mt19937_64 rng(10);
  Conv2d conv({2, 3, 3, 1, 1, 1, true}, DType::kFloat32, rng);
  const auto params = conv.named_parameters();
  REQUIRE(params.size() == 2);
  CHECK(params[0].name == "weight");
  CHECK(count_parameters(conv) == 3 * 2 * 9 + 3);
}

}  // TEST_SUITE
