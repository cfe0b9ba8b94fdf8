#include "cmunet/augment.hpp"

#include <cmath>

#include "cmunet/ops.hpp"

namespace cmunet {

namespace {

struct Planes {
  std::int64_t channels, height, width;
  std::vector<float> image;  // [C,H,W]
  std::vector<std::int32_t> mask;
};

// new(y, x) = old(map(y, x)) for both image and mask.
template <class Map>
Planes remap(const Planes& p, std::int64_t h, std::int64_t w, Map map) {
  Planes out{p.channels, h, w, std::vector<float>(static_cast<std::size_t>(p.channels * h * w)),
             std::vector<std::int32_t>(static_cast<std::size_t>(h * w))};
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto [sy, sx] = map(y, x);
      const auto src = sy * p.width + sx;
      out.mask[static_cast<std::size_t>(y * w + x)] = p.mask[static_cast<std::size_t>(src)];
      for (std::int64_t c = 0; c < p.channels; ++c) {
        out.image[static_cast<std::size_t>((c * h + y) * w + x)] =
            p.image[static_cast<std::size_t>(c * p.height * p.width + src)];
      }
    }
  }
  return out;
}

std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Planes rescale(const Planes& p, double s) {
  const auto h = std::max<std::int64_t>(1, std::llround(static_cast<double>(p.height) * s));
  const auto w = std::max<std::int64_t>(1, std::llround(static_cast<double>(p.width) * s));
  if (h == p.height && w == p.width) return p;
  Planes out{p.channels, h, w, {}, std::vector<std::int32_t>(static_cast<std::size_t>(h * w))};
  {
    NoGradGuard guard;
    const Tensor src = Tensor::from_values(
        {1, p.channels, p.height, p.width},
        std::vector<double>(p.image.begin(), p.image.end()), DType::kFloat32);
    const Tensor dst = resize(src, h, w, ResizeMode::kBilinear);
    auto d = dst.data<float>();
    out.image.assign(d.begin(), d.end());
  }
  for (std::int64_t y = 0; y < h; ++y) {
    const auto sy = std::min(p.height - 1, static_cast<std::int64_t>((y + 0.5) * p.height / h));
    for (std::int64_t x = 0; x < w; ++x) {
      const auto sx = std::min(p.width - 1, static_cast<std::int64_t>((x + 0.5) * p.width / w));
      out.mask[static_cast<std::size_t>(y * w + x)] = p.mask[static_cast<std::size_t>(sy * p.width + sx)];
    }
  }
  return out;
}

std::pair<std::int64_t, std::int64_t> dims_after(const AugmentDraw& d, std::int64_t h,
                                                 std::int64_t w) {
  if (d.rot90 % 2 != 0) std::swap(h, w);
  h = std::max<std::int64_t>(1, std::llround(static_cast<double>(h) * d.scale));
  w = std::max<std::int64_t>(1, std::llround(static_cast<double>(w) * d.scale));
  return {h, w};
}

}  // namespace

AugmentDraw draw_augment(const AugmentConfig& cfg, std::int64_t height, std::int64_t width,
                         std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  AugmentDraw d;
  if (cfg.hflip) d.hflip = coin(rng) == 1;
  if (cfg.vflip) d.vflip = coin(rng) == 1;
  if (cfg.rotate) d.rot90 = std::uniform_int_distribution<int>(0, 3)(rng);
  if (cfg.scale) {
    d.scale = kAugmentScales[std::uniform_int_distribution<std::size_t>(0, kAugmentScales.size() - 1)(rng)];
  }
  const auto [h, w] = dims_after(d, height, width);
  const std::int64_t ph = std::max(h, cfg.crop), pw = std::max(w, cfg.crop);
  d.crop_y = std::uniform_int_distribution<std::int64_t>(0, ph - cfg.crop)(rng);
  d.crop_x = std::uniform_int_distribution<std::int64_t>(0, pw - cfg.crop)(rng);
  return d;
}

SegSample apply_augment(const SegSample& sample, const AugmentDraw& draw, std::int64_t crop) {
  Planes p{sample.image.dim(0), sample.height, sample.width, {}, sample.mask};
  {
    auto src = sample.image.data<float>();
    p.image.assign(src.begin(), src.end());
  }
  if (draw.hflip) {
    p = remap(p, p.height, p.width, [&](auto y, auto x) { return std::pair{y, p.width - 1 - x}; });
  }
  if (draw.vflip) {
    p = remap(p, p.height, p.width, [&](auto y, auto x) { return std::pair{p.height - 1 - y, x}; });
  }
  for (int r = 0; r < ((draw.rot90 % 4) + 4) % 4; ++r) {
    const auto w_old = p.width;
    p = remap(p, p.width, p.height, [&](auto y, auto x) { return std::pair{x, w_old - 1 - y}; });
  }
  p = rescale(p, draw.scale);
  // Reflect-pad (centred) up to the crop size, then cut the crop window.
  const std::int64_t ph = std::max(p.height, crop), pw = std::max(p.width, crop);
  const std::int64_t top = (ph - p.height) / 2, left = (pw - p.width) / 2;
  const std::int64_t h = p.height, w = p.width;
  p = remap(p, crop, crop, [&](auto y, auto x) {
    return std::pair{reflect(y + draw.crop_y - top, h), reflect(x + draw.crop_x - left, w)};
  });

  SegSample out;
  out.id = sample.id;
  out.height = p.height;
  out.width = p.width;
  out.mask = std::move(p.mask);
  out.image = Tensor::empty({p.channels, p.height, p.width}, DType::kFloat32);
  auto dst = out.image.data<float>();
  std::copy(p.image.begin(), p.image.end(), dst.begin());
  return out;
}

SegSample augment(const SegSample& sample, const AugmentConfig& cfg, std::mt19937_64& rng) {
  return apply_augment(sample, draw_augment(cfg, sample.height, sample.width, rng), cfg.crop);
}

std::uint64_t sample_seed(std::uint64_t seed, const std::string& id, std::int64_t epoch) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  const auto e = static_cast<std::uint64_t>(epoch);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(e >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace cmunet
