#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmunet/tensor.hpp"

namespace cmunet {

// 8-bit raster, channels interleaved (3 for PPM, 1 for PGM).
struct Raster {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

// Binary P6 / P5 with maxval 255.
Raster read_ppm(const std::string& path);
Raster read_pgm(const std::string& path);
void write_ppm(const std::string& path, const Raster& image);
void write_pgm(const std::string& path, const Raster& image);

struct SegSample {
  Tensor image;  // [3,H,W] in [0,1], real32
  std::vector<std::int32_t> mask;  // [H,W]
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::string id;
};

SegSample load_sample(const std::string& image_path, const std::string& mask_path,
                      std::int64_t num_classes);
void save_sample(const SegSample& sample, const std::string& image_path,
                 const std::string& mask_path);

Raster image_to_raster(const Tensor& image);
Tensor raster_to_image(const Raster& raster);

}  // namespace cmunet
