#include "cmunet/blocks.hpp"

#include <cmath>

#include "cmunet/ops.hpp"

namespace cmunet {

namespace {

std::shared_ptr<Conv2d> make_conv(std::int64_t in, std::int64_t out, std::int64_t k, DType dtype,
                                   std::mt19937_64& rng, std::int64_t groups = 1,
                                   bool bias = true) {
  return std::make_shared<Conv2d>(Conv2dSpec{in, out, k, 1, k / 2, groups, bias, 1.0}, dtype, rng);
}

std::int64_t bottleneck(std::int64_t c) { return std::max<std::int64_t>(1, c / 4); }

Tensor mean_max_maps(const Tensor& x) {
  return concat({channel_reduce(x, ChannelReduce::kMean), channel_reduce(x, ChannelReduce::kMax)},
                1);
}

}  // namespace

CsAttention::CsAttention(std::int64_t channels, DType dtype, std::mt19937_64& rng)
    : Module(dtype) {
  fc1 = register_module("fc1", make_conv(channels, bottleneck(channels), 1, dtype, rng));
  fc2 = register_module("fc2", make_conv(bottleneck(channels), channels, 1, dtype, rng));
  spatial = register_module("spatial", make_conv(2, 1, 7, dtype, rng));
}

Tensor CsAttention::channel_gate(const Tensor& x) const {
  auto mlp = [&](const Tensor& v) { return fc2->forward(relu(fc1->forward(v))); };
  return sigmoid(add(mlp(pool2d(x, PoolKind::kGlobalMean)), mlp(pool2d(x, PoolKind::kGlobalMax))));
}

Tensor CsAttention::spatial_gate(const Tensor& x) const {
  return sigmoid(spatial->forward(mean_max_maps(x)));
}

Tensor CsAttention::forward(const Tensor& x) const {
  const Tensor xc = mul(x, channel_gate(x));
  return mul(xc, spatial_gate(xc));
}

std::int64_t CsMambaBlockConfig::inner() const {
  const auto e = static_cast<std::int64_t>(std::floor(expansion * static_cast<double>(channels)));
  if (e < 1) throw ConfigError("csmamba: expansion * channels must be at least 1");
  return e;
}

CsMambaBlock::CsMambaBlock(const CsMambaBlockConfig& cfg, DType dtype, std::mt19937_64& rng)
    : Module(dtype), cfg_(cfg) {
  const std::int64_t c = cfg.channels, e = cfg.inner();
  in_proj = register_module("in_proj", make_conv(c, e, 1, dtype, rng));
  dwconv = register_module("dwconv", make_conv(e, e, 3, dtype, rng, e));
  ssm::Ssm2dConfig sc;
  sc.channels = e;
  sc.state_size = cfg.state_size;
  sc.merge = cfg.merge;
  sc.share_directions = cfg.share_directions;
  sc.impl = cfg.impl;
  ssm = register_module("ssm", std::make_shared<ssm::Ssm2d>(sc, dtype, rng));
  norm = register_module("norm", std::make_shared<LayerNorm>(e, 1, dtype));
  cs = register_module("cs", std::make_shared<CsAttention>(c, dtype, rng));
  gate_proj = register_module("gate_proj", make_conv(c, e, 1, dtype, rng));
  out_proj = register_module("out_proj", make_conv(e, c, 1, dtype, rng));
}

void CsMambaBlock::set_scan_impl(ssm::ScanImpl impl) {
  cfg_.impl = impl;
  ssm->set_impl(impl);
}

Tensor CsMambaBlock::forward(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.channels) {
    throw DimensionError("csmamba: expected " + std::to_string(cfg_.channels) +
                         " channels, got " + shape_to_string(x.shape()));
  }
  const Tensor x1 = norm->forward(ssm->forward(silu(dwconv->forward(in_proj->forward(x)))));
  const Tensor x2 = silu(gate_proj->forward(cs->forward(x)));
  const Tensor out = out_proj->forward(mul(x1, x2));
  return cfg_.residual ? add(x, out) : out;
}

std::int64_t MsaaConfig::out_channels() const { return in_channels / reduction; }

void MsaaConfig::validate() const {
  if (reduction < 1 || in_channels % reduction != 0 || in_channels / reduction < 1) {
    throw ConfigError("msaa: in_channels " + std::to_string(in_channels) +
                      " not divisible by reduction " + std::to_string(reduction));
  }
  if (kernel_set.empty()) throw ConfigError("msaa: kernel_set is empty");
  for (auto k : kernel_set) {
    if (k < 1 || k % 2 == 0) throw ConfigError("msaa: kernels must be odd");
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
    throw ConfigError("msaa: spatial_kernel must be odd");
  }
}

Msaa::Msaa(std::int64_t cur_channels, std::int64_t prev_channels, std::int64_t next_channels,
           const MsaaConfig& cfg, DType dtype, std::mt19937_64& rng)
    : Module(dtype), cur_channels_(cur_channels), cfg_(cfg) {
  if (cfg_.in_channels != 3 * cur_channels) {
    throw ConfigError("msaa: in_channels must be 3 x " + std::to_string(cur_channels));
  }
  cfg_.validate();
  const std::int64_t c2 = cfg_.out_channels();
  if (prev_channels > 0) {
    prev_proj = register_module("prev_proj", make_conv(prev_channels, cur_channels, 1, dtype, rng));
  }
  if (next_channels > 0) {
    next_proj = register_module("next_proj", make_conv(next_channels, cur_channels, 1, dtype, rng));
  }
  reduce = register_module("reduce", make_conv(cfg_.in_channels, c2, 1, dtype, rng));
  for (auto k : cfg_.kernel_set) {
    scales.push_back(
        register_module("scale" + std::to_string(k), make_conv(c2, c2, k, dtype, rng, c2)));
  }
  spatial = register_module("spatial", make_conv(2, 1, cfg_.spatial_kernel, dtype, rng));
  channel_fc1 = register_module("channel_fc1", make_conv(c2, bottleneck(c2), 1, dtype, rng));
  channel_fc2 = register_module("channel_fc2", make_conv(bottleneck(c2), c2, 1, dtype, rng));
}

Tensor Msaa::align(const Tensor& f, const std::shared_ptr<Conv2d>& proj,
                   const Tensor& f_cur) const {
  if (!f.defined() || !proj) return f_cur;
  return proj->forward(resize(f, f_cur.dim(2), f_cur.dim(3), ResizeMode::kBilinear));
}

Tensor Msaa::fuse(const Tensor& f_prev, const Tensor& f_cur, const Tensor& f_next) const {
  if (f_cur.ndim() != 4 || f_cur.dim(1) != cur_channels_) {
    throw DimensionError("msaa: expected " + std::to_string(cur_channels_) +
                         " channels, got " + shape_to_string(f_cur.shape()));
  }
  const Tensor hat =
      concat({f_cur, align(f_prev, prev_proj, f_cur), align(f_next, next_proj, f_cur)}, 1);
  const Tensor reduced = reduce->forward(hat);
  Tensor f_ms;
  for (const auto& conv : scales) {
    const Tensor branch = conv->forward(reduced);
    f_ms = f_ms.defined() ? add(f_ms, branch) : branch;
  }
  return f_ms;
}

Tensor Msaa::spatial_path(const Tensor& f_ms) const {
  return mul(f_ms, sigmoid(spatial->forward(mean_max_maps(f_ms))));
}

Tensor Msaa::channel_path(const Tensor& f_ms) const {
  const Tensor gate = sigmoid(
      channel_fc2->forward(relu(channel_fc1->forward(pool2d(f_ms, PoolKind::kGlobalMean)))));
  return mul(f_ms, gate);
}

Tensor Msaa::forward(const Tensor& f_prev, const Tensor& f_cur, const Tensor& f_next) const {
  const Tensor f_ms = fuse(f_prev, f_cur, f_next);
  return add(spatial_path(f_ms), channel_path(f_ms));
}

}  // namespace cmunet
