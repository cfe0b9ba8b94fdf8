#include "cmunet/config.hpp"

#include <fstream>

namespace cmunet {

void RunConfig::validate() const {
  model.validate();
  if (train.epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be positive");
  if (train.schedule != "cosine") throw ConfigError("train.schedule must be \"cosine\"");
  if (train.weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (data.crop < 32 || data.crop % 32 != 0) {
    throw ConfigError("data.crop must be a positive multiple of 32");
  }
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json model = model_config_to_json(cfg.model);
  model.erase("msaa");
  model.erase("multi_output");
  return {
      {"model", model},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"lr", cfg.train.lr},
        {"schedule", cfg.train.schedule},
        {"weight_decay", cfg.train.weight_decay},
        {"seed", cfg.train.seed},
        {"deterministic", cfg.train.deterministic},
        {"tta", cfg.train.tta}}},
      {"data",
       {{"root", cfg.data.root},
        {"crop", cfg.data.crop},
        {"hflip", cfg.data.hflip},
        {"vflip", cfg.data.vflip},
        {"rotate", cfg.data.rotate},
        {"scale", cfg.data.scale}}},
      {"ablation", {{"msaa", cfg.model.use_msaa}, {"multi_output", cfg.model.multi_output}}},
  };
}

namespace {

void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  require_object(j, "config");
  RunConfig cfg;
  try {
    for (const auto& [section, body] : j.items()) {
      require_object(body, section);
      if (section == "model") {
        if (body.contains("msaa") || body.contains("multi_output")) {
          throw ConfigError("ablation flags belong in the \"ablation\" section");
        }
        // Ablation flags are applied after, so keep the current ones.
        cfg.model = model_config_from_json(body, cfg.model);
      } else if (section == "train") {
        for (const auto& [key, v] : body.items()) {
          if (key == "epochs") cfg.train.epochs = v.get<std::int64_t>();
          else if (key == "batch_size") cfg.train.batch_size = v.get<std::int64_t>();
          else if (key == "lr") cfg.train.lr = v.get<double>();
          else if (key == "schedule") cfg.train.schedule = v.get<std::string>();
          else if (key == "weight_decay") cfg.train.weight_decay = v.get<double>();
          else if (key == "seed") cfg.train.seed = v.get<std::uint64_t>();
          else if (key == "deterministic") cfg.train.deterministic = v.get<bool>();
          else if (key == "tta") cfg.train.tta = v.get<bool>();
          else throw ConfigError("unknown train key '" + key + "'");
        }
      } else if (section == "data") {
        for (const auto& [key, v] : body.items()) {
          if (key == "root") cfg.data.root = v.get<std::string>();
          else if (key == "crop") cfg.data.crop = v.get<std::int64_t>();
          else if (key == "hflip") cfg.data.hflip = v.get<bool>();
          else if (key == "vflip") cfg.data.vflip = v.get<bool>();
          else if (key == "rotate") cfg.data.rotate = v.get<bool>();
          else if (key == "scale") cfg.data.scale = v.get<bool>();
          else throw ConfigError("unknown data key '" + key + "'");
        }
      } else if (section == "ablation") {
        for (const auto& [key, v] : body.items()) {
          if (key == "msaa") cfg.model.use_msaa = v.get<bool>();
          else if (key == "multi_output") cfg.model.multi_output = v.get<bool>();
          else throw ConfigError("unknown ablation key '" + key + "'");
        }
      } else {
        throw ConfigError("unknown config section '" + section + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace cmunet
