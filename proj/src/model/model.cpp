#include "cmunet/model.hpp"

#include <set>

#include "cmunet/ops.hpp"

namespace cmunet {

ModelConfig ModelConfig::mini() { return {}; }

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.encoder_channels = {64, 128, 256, 512};
  cfg.blocks_per_stage = {2, 2, 2, 2};
  cfg.state_size = 16;
  cfg.num_classes = 6;
  return cfg;
}

std::int64_t ModelConfig::decoder_width(int level) const {
  return 3 * encoder_channels[static_cast<std::size_t>(level)] / msaa_reduction;
}

std::vector<std::int64_t> ModelConfig::metric_classes() const {
  if (!included_classes.empty()) return included_classes;
  std::vector<std::int64_t> all(static_cast<std::size_t>(num_classes));
  for (std::int64_t k = 0; k < num_classes; ++k) all[static_cast<std::size_t>(k)] = k;
  return all;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model: num_classes must be at least 2");
  if (in_channels < 1) throw ConfigError("model: in_channels must be positive");
  for (int i = 0; i < 4; ++i) {
    if (encoder_channels[static_cast<std::size_t>(i)] < 1) {
      throw ConfigError("model: encoder_channels must be positive");
    }
    if (blocks_per_stage[static_cast<std::size_t>(i)] < 1) {
      throw ConfigError("model: blocks_per_stage must be positive");
    }
  }
  for (int i = 0; i < 3; ++i) {
    MsaaConfig m{3 * encoder_channels[static_cast<std::size_t>(i)], msaa_reduction, msaa_kernels,
                 msaa_spatial_kernel};
    m.validate();
  }
  if (decoder_csmamba_per_stage < 0) throw ConfigError("model: negative decoder depth");
  if (state_size < 1) throw ConfigError("model: state_size must be positive");
  if (expansion <= 0) throw ConfigError("model: expansion must be positive");
  if (aux_weight < 0) throw ConfigError("model: aux_weight must be non-negative");
  std::set<std::int64_t> seen;
  for (auto c : included_classes) {
    if (c < 0 || c >= num_classes || !seen.insert(c).second) {
      throw ConfigError("model: included_classes must be distinct values in [0, num_classes)");
    }
  }
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {
      {"in_channels", cfg.in_channels},
      {"encoder_channels", cfg.encoder_channels},
      {"blocks_per_stage", cfg.blocks_per_stage},
      {"decoder_csmamba_per_stage", cfg.decoder_csmamba_per_stage},
      {"num_classes", cfg.num_classes},
      {"state_size", cfg.state_size},
      {"expansion", cfg.expansion},
      {"msaa_reduction", cfg.msaa_reduction},
      {"msaa_kernels", cfg.msaa_kernels},
      {"msaa_spatial_kernel", cfg.msaa_spatial_kernel},
      {"merge_mode", cfg.merge_mode == ssm::MergeMode::kSum ? "sum" : "mean"},
      {"share_directions", cfg.share_directions},
      {"residual", cfg.residual},
      {"aux_weight", cfg.aux_weight},
      {"included_classes", cfg.included_classes},
      {"msaa", cfg.use_msaa},
      {"multi_output", cfg.multi_output},
      {"dtype", dtype_name(cfg.dtype)},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig cfg = base;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "in_channels") cfg.in_channels = v.get<std::int64_t>();
      else if (key == "encoder_channels") cfg.encoder_channels = v.get<std::array<std::int64_t, 4>>();
      else if (key == "blocks_per_stage") cfg.blocks_per_stage = v.get<std::array<std::int64_t, 4>>();
      else if (key == "decoder_csmamba_per_stage") cfg.decoder_csmamba_per_stage = v.get<std::int64_t>();
      else if (key == "num_classes") cfg.num_classes = v.get<std::int64_t>();
      else if (key == "state_size") cfg.state_size = v.get<std::int64_t>();
      else if (key == "expansion") cfg.expansion = v.get<double>();
      else if (key == "msaa_reduction") cfg.msaa_reduction = v.get<std::int64_t>();
      else if (key == "msaa_kernels") cfg.msaa_kernels = v.get<std::vector<std::int64_t>>();
      else if (key == "msaa_spatial_kernel") cfg.msaa_spatial_kernel = v.get<std::int64_t>();
      else if (key == "merge_mode") {
        const auto s = v.get<std::string>();
        if (s == "sum") cfg.merge_mode = ssm::MergeMode::kSum;
        else if (s == "mean") cfg.merge_mode = ssm::MergeMode::kMean;
        else throw ConfigError("model.merge_mode must be \"sum\" or \"mean\"");
      }
      else if (key == "share_directions") cfg.share_directions = v.get<bool>();
      else if (key == "residual") cfg.residual = v.get<bool>();
      else if (key == "aux_weight") cfg.aux_weight = v.get<double>();
      else if (key == "included_classes") cfg.included_classes = v.get<std::vector<std::int64_t>>();
      else if (key == "msaa") cfg.use_msaa = v.get<bool>();
      else if (key == "multi_output") cfg.multi_output = v.get<bool>();
      else if (key == "dtype") {
        const auto s = v.get<std::string>();
        if (s == "real32") cfg.dtype = DType::kFloat32;
        else if (s == "real64") cfg.dtype = DType::kFloat64;
        else throw ConfigError("model.dtype must be \"real32\" or \"real64\"");
      }
      else throw ConfigError("unknown model key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

std::shared_ptr<Conv2d> conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride,
                             bool bias, DType dtype, std::mt19937_64& rng, double gain = 2.0) {
  return std::make_shared<Conv2d>(Conv2dSpec{in, out, k, stride, k / 2, 1, bias, gain}, dtype,
                                  rng);
}

}  // namespace

BasicBlock::BasicBlock(std::int64_t in, std::int64_t out, std::int64_t stride, DType dtype,
                       std::mt19937_64& rng)
    : Module(dtype) {
  conv1 = register_module("conv1", conv(in, out, 3, stride, false, dtype, rng));
  bn1 = register_module("bn1", std::make_shared<BatchNorm2d>(out, dtype));
  conv2 = register_module("conv2", conv(out, out, 3, 1, false, dtype, rng));
  bn2 = register_module("bn2", std::make_shared<BatchNorm2d>(out, dtype));
  if (stride != 1 || in != out) {
    down = register_module("down", conv(in, out, 1, stride, false, dtype, rng));
    down_bn = register_module("down_bn", std::make_shared<BatchNorm2d>(out, dtype));
  }
}

Tensor BasicBlock::forward(const Tensor& x) {
  const Tensor y = bn2->forward(conv2->forward(relu(bn1->forward(conv1->forward(x)))));
  const Tensor shortcut = down ? down_bn->forward(down->forward(x)) : x;
  return relu(add(y, shortcut));
}

Encoder::Encoder(const ModelConfig& cfg, std::mt19937_64& rng) : Module(cfg.dtype) {
  const auto& ch = cfg.encoder_channels;
  stem = register_module(
      "stem", std::make_shared<Conv2d>(Conv2dSpec{cfg.in_channels, ch[0], 7, 2, 3, 1, false},
                                       cfg.dtype, rng));
  stem_bn = register_module("stem_bn", std::make_shared<BatchNorm2d>(ch[0], cfg.dtype));
  std::int64_t in = ch[0];
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::int64_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      stages[s].push_back(register_module(
          "layer" + std::to_string(s + 1) + "." + std::to_string(b),
          std::make_shared<BasicBlock>(in, ch[s], stride, cfg.dtype, rng)));
      in = ch[s];
    }
  }
}

FeaturePyramid Encoder::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0 || x.dim(2) == 0 ||
      x.dim(3) == 0) {
    throw DimensionError("encoder: input must be [B,C,H,W] with H, W divisible by 32, got " +
                         shape_to_string(x.shape()));
  }
  Tensor h = relu(stem_bn->forward(stem->forward(x)));
  h = pool2d(h, PoolKind::kMax, 3, 2, 1);
  FeaturePyramid fp;
  for (std::size_t s = 0; s < 4; ++s) {
    for (auto& block : stages[s]) h = block->forward(h);
    fp.levels[s] = h;
  }
  return fp;
}

std::int64_t analytic_encoder_parameters(std::int64_t in_channels,
                                         const std::array<std::int64_t, 4>& channels,
                                         const std::array<std::int64_t, 4>& blocks) {
  auto conv_p = [](std::int64_t i, std::int64_t o, std::int64_t k) { return i * o * k * k; };
  auto bn_p = [](std::int64_t c) { return 2 * c; };
  std::int64_t total = conv_p(in_channels, channels[0], 7) + bn_p(channels[0]);
  std::int64_t in = channels[0];
  for (std::size_t s = 0; s < 4; ++s) {
    const std::int64_t c = channels[s];
    for (std::int64_t b = 0; b < blocks[s]; ++b) {
      total += conv_p(in, c, 3) + bn_p(c) + conv_p(c, c, 3) + bn_p(c);
      if (in != c || (s > 0 && b == 0)) total += conv_p(in, c, 1) + bn_p(c);
      in = c;
    }
  }
  return total;
}

DecoderStage::DecoderStage(std::int64_t deep_channels, std::int64_t skip_channels,
                           const ModelConfig& cfg, std::mt19937_64& rng)
    : Module(cfg.dtype) {
  lateral = register_module(
      "lateral", conv(deep_channels, skip_channels, 1, 1, true, cfg.dtype, rng, 1.0));
  CsMambaBlockConfig bc;
  bc.channels = skip_channels;
  bc.expansion = cfg.expansion;
  bc.state_size = cfg.state_size;
  bc.merge = cfg.merge_mode;
  bc.share_directions = cfg.share_directions;
  bc.residual = cfg.residual;
  for (std::int64_t i = 0; i < cfg.decoder_csmamba_per_stage; ++i) {
    blocks.push_back(register_module("block" + std::to_string(i),
                                     std::make_shared<CsMambaBlock>(bc, cfg.dtype, rng)));
  }
}

Tensor DecoderStage::forward(const Tensor& deep, const Tensor& skip) const {
  if (skip.ndim() != 4 || deep.ndim() != 4 || skip.dim(2) != 2 * deep.dim(2) ||
      skip.dim(3) != 2 * deep.dim(3)) {
    throw DimensionError("decoder stage: deep " + shape_to_string(deep.shape()) +
                         " is not half the size of skip " + shape_to_string(skip.shape()));
  }
  Tensor h = add(lateral->forward(resize(deep, skip.dim(2), skip.dim(3), ResizeMode::kBilinear)),
                 skip);
  for (const auto& block : blocks) h = block->forward(h);
  return h;
}

CmUnet::CmUnet(const ModelConfig& cfg, std::uint64_t seed) : Module(cfg.dtype), cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  encoder = register_module("encoder", std::make_shared<Encoder>(cfg_, rng));
  const auto& ch = cfg_.encoder_channels;
  for (int i = 0; i < 3; ++i) {
    const auto c = ch[static_cast<std::size_t>(i)];
    const auto name = std::to_string(i + 1);
    if (cfg_.use_msaa) {
      const MsaaConfig mc{3 * c, cfg_.msaa_reduction, cfg_.msaa_kernels, cfg_.msaa_spatial_kernel};
      const std::int64_t prev = i > 0 ? ch[static_cast<std::size_t>(i - 1)] : 0;
      const std::int64_t next = ch[static_cast<std::size_t>(i + 1)];
      msaa[static_cast<std::size_t>(i)] = register_module(
          "msaa" + name, std::make_shared<Msaa>(c, prev, next, mc, cfg_.dtype, rng));
    } else {
      plain_skip[static_cast<std::size_t>(i)] = register_module(
          "skip" + name, conv(c, cfg_.decoder_width(i), 1, 1, true, cfg_.dtype, rng, 1.0));
    }
  }
  std::int64_t deep = ch[3];
  for (int s = 0; s < 3; ++s) {
    const int level = 2 - s;
    const std::int64_t width = cfg_.decoder_width(level);
    decoder[static_cast<std::size_t>(s)] = register_module(
        "decoder" + std::to_string(s + 1), std::make_shared<DecoderStage>(deep, width, cfg_, rng));
    if (cfg_.multi_output) {
      aux_heads[static_cast<std::size_t>(s)] = register_module(
          "aux_head" + std::to_string(s + 1),
          conv(width, cfg_.num_classes, 1, 1, true, cfg_.dtype, rng, 1.0));
    }
    deep = width;
  }
  head = register_module("head", conv(deep, cfg_.num_classes, 1, 1, true, cfg_.dtype, rng, 1.0));
}

FeaturePyramid CmUnet::encode(const Tensor& x) { return encoder->forward(x); }

std::array<Tensor, 3> CmUnet::skips(const FeaturePyramid& fp) const {
  std::array<Tensor, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    if (cfg_.use_msaa) {
      const Tensor prev = i > 0 ? fp.levels[i - 1] : Tensor{};
      out[i] = msaa[i]->forward(prev, fp.levels[i], fp.levels[i + 1]);
    } else {
      out[i] = plain_skip[i]->forward(fp.levels[i]);
    }
  }
  return out;
}

ModelOutputs CmUnet::forward(const Tensor& x) {
  const FeaturePyramid fp = encode(x);
  const auto sk = skips(fp);
  ModelOutputs out;
  Tensor h = fp.levels[3];
  for (std::size_t s = 0; s < 3; ++s) {
    h = decoder[s]->forward(h, sk[2 - s]);
    if (cfg_.multi_output) out.aux_logits.push_back(aux_heads[s]->forward(h));
  }
  h = resize(h, 4 * h.dim(2), 4 * h.dim(3), ResizeMode::kBilinear);
  out.final_logits = head->forward(h);
  return out;
}

void CmUnet::set_scan_impl(ssm::ScanImpl impl) {
  for (auto& stage : decoder) {
    for (auto& block : stage->blocks) block->set_scan_impl(impl);
  }
}

std::vector<std::pair<std::string, std::int64_t>> CmUnet::parameter_breakdown() const {
  std::vector<std::pair<std::string, std::int64_t>> out;
  for (const auto& [name, child] : children()) out.emplace_back(name, count_parameters(*child));
  return out;
}

}  // namespace cmunet
