#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmunet/image_io.hpp"

namespace cmunet {

// <root>/images/<id>.ppm, <root>/masks/<id>.pgm, <root>/meta.json
struct DatasetMeta {
  std::int64_t num_classes = 2;
  std::vector<std::string> class_names;
  std::vector<std::string> train;
  std::vector<std::string> val;
};

DatasetMeta load_meta(const std::string& root);
void save_meta(const std::string& root, const DatasetMeta& meta);

std::string image_path(const std::string& root, const std::string& id);
std::string mask_path(const std::string& root, const std::string& id);

// Loads the listed samples, in order.
std::vector<SegSample> load_samples(const std::string& root, const DatasetMeta& meta,
                                    const std::vector<std::string>& ids);

struct SynthOptions {
  std::int64_t num = 250;
  std::int64_t size = 64;
  std::int64_t classes = 4;
  std::uint64_t seed = 42;
  double val_fraction = 0.2;
};

// Throws ConfigError before touching the disk when the options are invalid.
void validate_synth_options(const SynthOptions& opts);
// One synthetic image/mask pair; a pure function of (index, options).
SegSample synth_sample(std::int64_t index, const SynthOptions& opts);
DatasetMeta synth_generate(const std::string& root, const SynthOptions& opts);

}  // namespace cmunet
