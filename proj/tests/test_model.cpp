#include <doctest.h>

#include <random>

#include "cmunet/config.hpp"
#include "cmunet/model.hpp"
#include "oracles.hpp"

using namespace cmunet;

TEST_SUITE("model") {

TEST_CASE("mini model output shapes") {
  CmUnet model(ModelConfig::mini(), 1);
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::randn({2, 3, 64, 64}, rng);
  const FeaturePyramid fp = model.encode(x);
  const std::int64_t expect[4][2] = {{16, 16}, {32, 8}, {64, 4}, {128, 2}};
  for (int i = 0; i < 4; ++i) {
    CHECK(fp.levels[i].dim(1) == expect[i][0]);
    CHECK(fp.levels[i].dim(2) == expect[i][1]);
  }
  const auto skips = model.skips(fp);
  for (int i = 0; i < 3; ++i) CHECK(skips[i].dim(1) == model.config().decoder_width(i));
  const ModelOutputs out = model.forward(x);
  CHECK(out.final_logits.shape() == Shape{2, 4, 64, 64});
  REQUIRE(out.aux_logits.size() == 3);
  CHECK(out.aux_logits[0].shape() == Shape{2, 4, 4, 4});
  CHECK(out.aux_logits[1].shape() == Shape{2, 4, 8, 8});
  CHECK(out.aux_logits[2].shape() == Shape{2, 4, 16, 16});
}

TEST_CASE("decoder widths follow 3C/alpha") {
  const ModelConfig m = ModelConfig::mini();
  CHECK(m.decoder_width(0) == 12);
  CHECK(m.decoder_width(1) == 24);
  CHECK(m.decoder_width(2) == 48);
}

TEST_CASE("input sides must be multiples of 32") {
  CmUnet model(ModelConfig::mini(), 1);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 3, 48, 64})), DimensionError);
}

TEST_CASE("parameter breakdown sums to the total") {
  CmUnet model(ModelConfig::mini(), 2);
  std::int64_t sum = 0;
  for (const auto& [name, n] : model.parameter_breakdown()) sum += n;
  CHECK(sum == count_parameters(model));
}

TEST_CASE("encoder count matches the layer-by-layer trunk formula") {
  for (const ModelConfig& cfg : {ModelConfig::mini(), ModelConfig::paper_scale()}) {
    CmUnet model(cfg, 3);
    const auto expect =
        oracle::resnet_trunk_parameters(cfg.in_channels, cfg.encoder_channels, cfg.blocks_per_stage);
    CHECK(count_parameters(*model.encoder) == expect);
    CHECK(analytic_encoder_parameters(cfg.in_channels, cfg.encoder_channels,
                                      cfg.blocks_per_stage) == expect);
  }
  CHECK(oracle::resnet_trunk_parameters(3, {64, 128, 256, 512}, {2, 2, 2, 2}) == 11176512);
}

TEST_CASE("ablation flags change the parameter count") {
  ModelConfig full = ModelConfig::mini();
  ModelConfig no_msaa = full;
  no_msaa.use_msaa = false;
  ModelConfig no_aux = full;
  no_aux.multi_output = false;
  const auto n_full = count_parameters(CmUnet(full, 1));
  CHECK(n_full > count_parameters(CmUnet(no_msaa, 1)));
  CHECK(n_full > count_parameters(CmUnet(no_aux, 1)));
  CmUnet plain(no_aux, 1);
  std::mt19937_64 rng(2);
  CHECK(plain.forward(Tensor::randn({1, 3, 64, 64}, rng)).aux_logits.empty());
}

TEST_CASE("same seed gives the same weights") {
  CmUnet a(ModelConfig::mini(), 9), b(ModelConfig::mini(), 9);
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor.to_vector() == pb[i].tensor.to_vector());
  }
}

TEST_CASE("model config json round trip and key validation") {
  ModelConfig cfg = ModelConfig::paper_scale();
  cfg.merge_mode = ssm::MergeMode::kMean;
  cfg.included_classes = {0, 2};
  const ModelConfig back = model_config_from_json(model_config_to_json(cfg));
  CHECK(model_config_to_json(back) == model_config_to_json(cfg));
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"num_classes", 1}}), ConfigError);
}

TEST_CASE("run config rejects unknown keys and misplaced ablation flags") {
  const RunConfig def;
  const nlohmann::json j = run_config_to_json(def);
  CHECK(run_config_to_json(run_config_from_json(j)) == j);
  nlohmann::json extra = j;
  extra["train"]["momentum"] = 0.9;
  CHECK_THROWS_AS(run_config_from_json(extra), ConfigError);
  nlohmann::json top = j;
  top["notes"] = "x";
  CHECK_THROWS_AS(run_config_from_json(top), ConfigError);
  nlohmann::json misplaced = j;
  misplaced["model"]["msaa"] = false;
  CHECK_THROWS_AS(run_config_from_json(misplaced), ConfigError);
  nlohmann::json sched = j;
  sched["train"]["schedule"] = "step";
  CHECK_THROWS_AS(run_config_from_json(sched), ConfigError);
  nlohmann::json abl = nlohmann::json::object();
  abl["ablation"] = {{"msaa", false}};
  CHECK_FALSE(run_config_from_json(abl).model.use_msaa);
  CHECK(def.train.lr == 6e-4);
}

}  // TEST_SUITE
