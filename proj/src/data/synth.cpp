#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <numbers>
#include <random>

#include "cmunet/dataset.hpp"

namespace cmunet {

namespace {

constexpr std::array<std::array<int, 3>, 7> kPalette{{
    {205, 55, 45},    // red rectangles
    {45, 80, 205},    // blue disks
    {225, 205, 50},   // yellow stripes
    {200, 60, 200},   // magenta rectangles
    {50, 205, 210},   // cyan disks
    {235, 140, 30},   // orange stripes
    {245, 245, 245},  // white rectangles
}};

constexpr std::array<const char*, 3> kShapeNames{"rectangle", "disk", "stripe"};

struct Canvas {
  std::int64_t size;
  std::vector<double> rgb;  // [3,H,W]
  std::vector<std::int32_t> mask;

  void paint(std::int64_t y, std::int64_t x, const std::array<double, 3>& color, int cls) {
    if (y < 0 || x < 0 || y >= size || x >= size) return;
    for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>((c * size + y) * size + x)] = color[c];
    mask[static_cast<std::size_t>(y * size + x)] = cls;
  }
};

}  // namespace

void validate_synth_options(const SynthOptions& opts) {
  if (opts.classes < 2 || opts.classes > 8) throw ConfigError("classes must be in [2, 8]");
  if (opts.size < 32 || opts.size % 32 != 0) {
    throw ConfigError("size must be a positive multiple of 32");
  }
  if (opts.num < 1) throw ConfigError("num must be positive");
  if (!(opts.val_fraction >= 0 && opts.val_fraction < 1)) {
    throw ConfigError("val_fraction must be in [0, 1)");
  }
}

SegSample synth_sample(std::int64_t index, const SynthOptions& opts) {
  std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(opts.classes),
                    static_cast<std::uint32_t>(opts.size)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::int64_t S = opts.size;
  const double s = static_cast<double>(S);

  Canvas cv{S, std::vector<double>(static_cast<std::size_t>(3 * S * S)),
            std::vector<std::int32_t>(static_cast<std::size_t>(S * S), 0)};
  // Background: greenish grey with a low-frequency wave and pixel noise.
  const double fy = uniform(1.0, 3.0), fx = uniform(1.0, 3.0), phase = uniform(0.0, 6.28);
  for (std::int64_t y = 0; y < S; ++y) {
    for (std::int64_t x = 0; x < S; ++x) {
      const double wave =
          14.0 * std::sin(2 * std::numbers::pi * (fy * y + fx * x) / s + phase);
      const std::array<double, 3> base{105.0, 120.0, 95.0};
      std::array<double, 3> px{};
      for (int c = 0; c < 3; ++c) px[c] = base[c] + wave + uniform(-14.0, 14.0);
      cv.paint(y, x, px, 0);
    }
  }

  struct Shape {
    int cls;
    int kind;
  };
  std::vector<Shape> shapes;
  for (int cls = 1; cls < opts.classes; ++cls) {
    const int copies = unit(rng) < 0.5 ? 1 : 2;
    for (int i = 0; i < copies; ++i) shapes.push_back({cls, (cls - 1) % 3});
  }
  std::shuffle(shapes.begin(), shapes.end(), rng);

  for (const auto& shp : shapes) {
    const auto& pal = kPalette[static_cast<std::size_t>(shp.cls - 1)];
    std::array<double, 3> tint{};
    for (int c = 0; c < 3; ++c) tint[c] = pal[static_cast<std::size_t>(c)] + uniform(-20.0, 20.0);
    auto color = [&]() {
      std::array<double, 3> px{};
      for (int c = 0; c < 3; ++c) px[c] = tint[c] + uniform(-12.0, 12.0);
      return px;
    };
    if (shp.kind == 0) {
      const auto h = static_cast<std::int64_t>(uniform(s / 8, s / 3));
      const auto w = static_cast<std::int64_t>(uniform(s / 8, s / 3));
      const auto y0 = static_cast<std::int64_t>(uniform(0, s - h));
      const auto x0 = static_cast<std::int64_t>(uniform(0, s - w));
      for (auto y = y0; y < y0 + h; ++y) {
        for (auto x = x0; x < x0 + w; ++x) cv.paint(y, x, color(), shp.cls);
      }
    } else if (shp.kind == 1) {
      const double r = uniform(s / 12, s / 6);
      const double cy = uniform(r, s - r), cx = uniform(r, s - r);
      for (std::int64_t y = 0; y < S; ++y) {
        for (std::int64_t x = 0; x < S; ++x) {
          const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
          if (dy * dy + dx * dx <= r * r) cv.paint(y, x, color(), shp.cls);
        }
      }
    } else {
      const auto thick = static_cast<std::int64_t>(uniform(s / 16, s / 9));
      const auto len = static_cast<std::int64_t>(uniform(s / 2, s));
      const bool horizontal = unit(rng) < 0.5;
      const auto a0 = static_cast<std::int64_t>(uniform(0, s - thick));
      const auto b0 = static_cast<std::int64_t>(uniform(0, s - len + 1));
      for (auto a = a0; a < a0 + thick; ++a) {
        for (auto b = b0; b < b0 + len; ++b) {
          if (horizontal) cv.paint(a, b, color(), shp.cls);
          else cv.paint(b, a, color(), shp.cls);
        }
      }
    }
  }

  SegSample out;
  out.height = S;
  out.width = S;
  out.mask = std::move(cv.mask);
  out.image = Tensor::empty({3, S, S}, DType::kFloat32);
  auto dst = out.image.data<float>();
  for (std::size_t i = 0; i < cv.rgb.size(); ++i) {
    // Quantize exactly as the PPM file will store it.
    dst[i] = static_cast<float>(std::lround(std::clamp(cv.rgb[i], 0.0, 255.0))) / 255.0f;
  }
  char id[32];
  std::snprintf(id, sizeof id, "s%05lld", static_cast<long long>(index));
  out.id = id;
  return out;
}

DatasetMeta synth_generate(const std::string& root, const SynthOptions& opts) {
  validate_synth_options(opts);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(root) / "images", ec);
  if (!ec) fs::create_directories(fs::path(root) / "masks", ec);
  if (ec) throw DataError(root + ": cannot create dataset directory (" + ec.message() + ")");

  DatasetMeta meta;
  meta.num_classes = opts.classes;
  meta.class_names.push_back("background");
  for (int c = 1; c < opts.classes; ++c) {
    meta.class_names.push_back(std::string(kShapeNames[static_cast<std::size_t>((c - 1) % 3)]) +
                               "_" + std::to_string(c));
  }
  const auto n_val = static_cast<std::int64_t>(std::llround(opts.val_fraction * opts.num));
  const std::int64_t n_train = opts.num - n_val;
  std::vector<std::string> ids(static_cast<std::size_t>(opts.num));
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < opts.num; ++i) {
    try {
      const SegSample s = synth_sample(i, opts);
      save_sample(s, image_path(root, s.id), mask_path(root, s.id));
      ids[static_cast<std::size_t>(i)] = s.id;
    } catch (...) {
#pragma omp critical(cmunet_synth_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  meta.train.assign(ids.begin(), ids.begin() + n_train);
  meta.val.assign(ids.begin() + n_train, ids.end());
  save_meta(root, meta);
  return meta;
}

}  // namespace cmunet
