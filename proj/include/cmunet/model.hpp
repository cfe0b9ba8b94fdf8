#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmunet/blocks.hpp"
#include "cmunet/nn.hpp"

namespace cmunet {

struct ModelConfig {
  std::int64_t in_channels = 3;
  std::array<std::int64_t, 4> encoder_channels{16, 32, 64, 128};
  std::array<std::int64_t, 4> blocks_per_stage{1, 1, 1, 1};
  std::int64_t decoder_csmamba_per_stage = 1;
  std::int64_t num_classes = 4;
  std::int64_t state_size = 8;
  double expansion = 2.0;
  std::int64_t msaa_reduction = 4;
  std::vector<std::int64_t> msaa_kernels{3, 5, 7};
  std::int64_t msaa_spatial_kernel = 7;
  ssm::MergeMode merge_mode = ssm::MergeMode::kSum;
  bool share_directions = false;
  bool residual = true;
  double aux_weight = 0.4;
  std::vector<std::int64_t> included_classes;  // empty = all
  bool use_msaa = true;
  bool multi_output = true;
  DType dtype = DType::kFloat32;

  static ModelConfig mini();
  static ModelConfig paper_scale();

  // Channels of the decoder stage fed by encoder level i (0-based).
  std::int64_t decoder_width(int level) const;
  std::vector<std::int64_t> metric_classes() const;
  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
// Rejects unknown keys; missing keys keep the defaults of `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

struct FeaturePyramid {
  std::array<Tensor, 4> levels;  // F1..F4 at strides 4, 8, 16, 32
};

struct ModelOutputs {
  Tensor final_logits;
  std::vector<Tensor> aux_logits;  // deepest stage first
};

class BasicBlock : public Module {
 public:
  BasicBlock(std::int64_t in, std::int64_t out, std::int64_t stride, DType dtype,
             std::mt19937_64& rng);
  Tensor forward(const Tensor& x);

  std::shared_ptr<Conv2d> conv1, conv2, down;
  std::shared_ptr<BatchNorm2d> bn1, bn2, down_bn;
};

class Encoder : public Module {
 public:
  Encoder(const ModelConfig& cfg, std::mt19937_64& rng);
  FeaturePyramid forward(const Tensor& x);

  std::shared_ptr<Conv2d> stem;
  std::shared_ptr<BatchNorm2d> stem_bn;
  std::array<std::vector<std::shared_ptr<BasicBlock>>, 4> stages;
};

// Parameter count of a ResNet basic-block trunk, computed layer by layer from
// the channel/block lists alone.
std::int64_t analytic_encoder_parameters(std::int64_t in_channels,
                                         const std::array<std::int64_t, 4>& channels,
                                         const std::array<std::int64_t, 4>& blocks);

class DecoderStage : public Module {
 public:
  DecoderStage(std::int64_t deep_channels, std::int64_t skip_channels, const ModelConfig& cfg,
               std::mt19937_64& rng);
  Tensor forward(const Tensor& deep, const Tensor& skip) const;

  std::shared_ptr<Conv2d> lateral;
  std::vector<std::shared_ptr<CsMambaBlock>> blocks;
};

class CmUnet : public Module {
 public:
  CmUnet(const ModelConfig& cfg, std::uint64_t seed);

  ModelOutputs forward(const Tensor& x);
  FeaturePyramid encode(const Tensor& x);
  // Skip features for levels F1..F3.
  std::array<Tensor, 3> skips(const FeaturePyramid& fp) const;

  const ModelConfig& config() const { return cfg_; }
  void set_scan_impl(ssm::ScanImpl impl);
  // Parameter counts of the top-level parts in registration order.
  std::vector<std::pair<std::string, std::int64_t>> parameter_breakdown() const;

  std::shared_ptr<Encoder> encoder;
  std::array<std::shared_ptr<Msaa>, 3> msaa;
  std::array<std::shared_ptr<Conv2d>, 3> plain_skip;
  std::array<std::shared_ptr<DecoderStage>, 3> decoder;  // deepest first
  std::array<std::shared_ptr<Conv2d>, 3> aux_heads;
  std::shared_ptr<Conv2d> head;

 private:
  ModelConfig cfg_;
};

}  // namespace cmunet
