#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cmunet/model.hpp"

namespace cmunet {

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 4;
  double lr = 6e-4;
  std::string schedule = "cosine";
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  bool deterministic = true;
  bool tta = false;  // evaluate validation with flip averaging
};

struct DataConfig {
  std::string root;
  std::int64_t crop = 64;
  bool hflip = true;
  bool vflip = true;
  bool rotate = true;
  bool scale = true;
};

// Sections: model, train, data, ablation {msaa, multi_output}. The ablation
// flags live in ModelConfig.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
// Unknown keys at any level raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace cmunet
