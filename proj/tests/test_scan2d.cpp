#include <doctest.h>

#include <random>
#include <set>

#include "cmunet/scan2d.hpp"

using namespace cmunet;
using namespace cmunet::ssm;

TEST_SUITE("scan2d") {

TEST_CASE("each direction visits every cell once") {
  const std::int64_t h = 3, w = 5;
  for (int k = 0; k < kNumDirections; ++k) {
    std::set<std::int64_t> seen;
    for (std::int64_t s = 0; s < h * w; ++s) {
      seen.insert(direction_position(static_cast<ScanDirection>(k), s, h, w));
    }
    CHECK(seen.size() == static_cast<std::size_t>(h * w));
  }
  CHECK(direction_position(ScanDirection::kRowFwd, 1, h, w) == 1);
  CHECK(direction_position(ScanDirection::kRowRev, 0, h, w) == h * w - 1);
  CHECK(direction_position(ScanDirection::kColFwd, 1, h, w) == w);
  CHECK(direction_position(ScanDirection::kColRev, 0, h, w) == h * w - 1);
  for (std::int64_t s = 0; s < h * w; ++s) {
    CHECK(direction_position(ScanDirection::kRowRev, s, h, w) ==
          direction_position(ScanDirection::kRowFwd, h * w - 1 - s, h, w));
    CHECK(direction_position(ScanDirection::kColRev, s, h, w) ==
          direction_position(ScanDirection::kColFwd, h * w - 1 - s, h, w));
  }
}

TEST_CASE("cross_scan lays out the four orders") {
  const Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4}, DType::kFloat64);
  const Tensor s = cross_scan(x);
  CHECK(s.shape() == Shape{4, 1, 4, 1});
  CHECK(s.to_vector() == std::vector<double>{1, 2, 3, 4, 4, 3, 2, 1, 1, 3, 2, 4, 4, 2, 3, 1});
}

TEST_CASE("merge after scan: sum gives 4x, mean gives x") {
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::randn({2, 3, 4, 5}, rng, DType::kFloat64);
  const Tensor s = cross_merge(cross_scan(x), 4, 5, MergeMode::kSum);
  const Tensor m = cross_merge(cross_scan(x), 4, 5, MergeMode::kMean);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(s.at(i) == doctest::Approx(4 * x.at(i)));
    CHECK(m.at(i) == doctest::Approx(x.at(i)));
  }
}

TEST_CASE("Ssm2d shape, sharing and implementation parity") {
  std::mt19937_64 rng(2);
  Ssm2dConfig cfg;
  cfg.channels = 6;
  cfg.state_size = 4;
  Ssm2d own(cfg, DType::kFloat64, rng);
  cfg.share_directions = true;
  Ssm2d shared(cfg, DType::kFloat64, rng);
  CHECK(count_parameters(own) > count_parameters(shared));
  CHECK(&shared.direction(0) == &shared.direction(3));
  CHECK(&own.direction(0) != &own.direction(1));
  CHECK(own.a_matrix().shape() == Shape{6, 4});

  const Tensor x = Tensor::randn({2, 6, 4, 3}, rng, DType::kFloat64);
  NoGradGuard g;
  const Tensor yp = own.forward(x);
  own.set_impl(ScanImpl::kSequential);
  const Tensor ys = own.forward(x);
  CHECK(yp.shape() == x.shape());
  for (std::int64_t i = 0; i < yp.numel(); ++i) CHECK(yp.at(i) == doctest::Approx(ys.at(i)));
}

}  // TEST_SUITE
