#include "cmunet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace cmunet {

namespace {

Raster read_netpbm(const std::string& path, const char* magic, std::int64_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> DataError { return DataError(path + ": " + what); };
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    throw fail(std::string("expected magic ") + magic);
  }
  pos = 2;
  auto next_int = [&]() {
    while (pos < bytes.size()) {
      const auto c = static_cast<unsigned char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw fail("malformed header");
    }
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 24)) throw fail("header value too large");
      ++pos;
    }
    return v;
  };
  Raster r;
  r.channels = channels;
  r.width = next_int();
  r.height = next_int();
  const std::int64_t maxval = next_int();
  if (r.width < 1 || r.height < 1) throw fail("empty image");
  if (maxval != 255) throw fail("maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw fail("malformed header");
  }
  ++pos;
  const auto n = static_cast<std::size_t>(r.width * r.height * channels);
  if (bytes.size() - pos != n) {
    throw fail("expected " + std::to_string(n) + " pixel bytes, found " +
               std::to_string(bytes.size() - pos));
  }
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return r;
}

void write_netpbm(const std::string& path, const char* magic, const Raster& r,
                  std::int64_t channels) {
  if (r.channels != channels ||
      static_cast<std::int64_t>(r.pixels.size()) != r.height * r.width * channels) {
    throw DataError(path + ": raster does not match the format");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  out << magic << '\n' << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels.data()),
            static_cast<std::streamsize>(r.pixels.size()));
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace

Raster read_ppm(const std::string& path) { return read_netpbm(path, "P6", 3); }
Raster read_pgm(const std::string& path) { return read_netpbm(path, "P5", 1); }
void write_ppm(const std::string& path, const Raster& image) { write_netpbm(path, "P6", image, 3); }
void write_pgm(const std::string& path, const Raster& image) { write_netpbm(path, "P5", image, 1); }

Tensor raster_to_image(const Raster& r) {
  Tensor t = Tensor::empty({r.channels, r.height, r.width}, DType::kFloat32);
  auto dst = t.data<float>();
  const auto plane = r.height * r.width;
  for (std::int64_t i = 0; i < plane; ++i) {
    for (std::int64_t c = 0; c < r.channels; ++c) {
      dst[c * plane + i] = static_cast<float>(r.pixels[static_cast<std::size_t>(i * r.channels + c)]) / 255.0f;
    }
  }
  return t;
}

Raster image_to_raster(const Tensor& image) {
  if (image.ndim() != 3) throw DimensionError("image must be [C,H,W]");
  Raster r{image.dim(1), image.dim(2), image.dim(0), {}};
  const auto plane = r.height * r.width;
  r.pixels.resize(static_cast<std::size_t>(plane * r.channels));
  for (std::int64_t c = 0; c < r.channels; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const double v = std::clamp(image.at(c * plane + i), 0.0, 1.0);
      r.pixels[static_cast<std::size_t>(i * r.channels + c)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return r;
}

SegSample load_sample(const std::string& image_path, const std::string& mask_path,
                      std::int64_t num_classes) {
  const Raster img = read_ppm(image_path);
  const Raster msk = read_pgm(mask_path);
  if (img.height != msk.height || img.width != msk.width) {
    throw DataError(mask_path + ": size " + std::to_string(msk.width) + "x" +
                    std::to_string(msk.height) + " differs from image " + image_path);
  }
  SegSample s;
  s.image = raster_to_image(img);
  s.height = img.height;
  s.width = img.width;
  s.mask.resize(msk.pixels.size());
  for (std::size_t i = 0; i < msk.pixels.size(); ++i) {
    if (msk.pixels[i] >= num_classes) {
      throw DataError(mask_path + ": class index " + std::to_string(msk.pixels[i]) +
                      " >= " + std::to_string(num_classes));
    }
    s.mask[i] = msk.pixels[i];
  }
  return s;
}

void save_sample(const SegSample& sample, const std::string& image_path,
                 const std::string& mask_path) {
  Raster m{sample.height, sample.width, 1, {}};
  m.pixels.reserve(sample.mask.size());
  for (auto v : sample.mask) {
    if (v < 0 || v > 255) throw DataError(mask_path + ": class index does not fit a byte");
    m.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  write_ppm(image_path, image_to_raster(sample.image));
  write_pgm(mask_path, m);
}

}  // namespace cmunet
