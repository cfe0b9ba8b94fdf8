#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "cmunet/image_io.hpp"

namespace cmunet {

inline constexpr std::array<double, 5> kAugmentScales{0.5, 0.75, 1.0, 1.25, 1.5};

struct AugmentConfig {
  bool hflip = true;
  bool vflip = true;
  bool rotate = true;  // multiples of 90 degrees
  bool scale = true;
  std::int64_t crop = 64;
};

// One concrete geometric transform. Applied in the order flip, rotate,
// rescale, reflect-pad to the crop size, crop.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns
  double scale = 1.0;
  std::int64_t crop_y = 0;
  std::int64_t crop_x = 0;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, std::int64_t height, std::int64_t width,
                         std::mt19937_64& rng);
// Image resampled bilinearly, mask by nearest neighbour.
SegSample apply_augment(const SegSample& sample, const AugmentDraw& draw, std::int64_t crop);
SegSample augment(const SegSample& sample, const AugmentConfig& cfg, std::mt19937_64& rng);

// Seed for one sample's augmentation stream: depends only on the run seed,
// the sample id and the epoch.
std::uint64_t sample_seed(std::uint64_t seed, const std::string& id, std::int64_t epoch);

}  // namespace cmunet
