#include "cmunet/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "cmunet/blocks.hpp"
#include "cmunet/gradcheck.hpp"
#include "cmunet/losses.hpp"
#include "cmunet/metrics.hpp"
#include "cmunet/model.hpp"
#include "cmunet/ops.hpp"
#include "cmunet/scan2d.hpp"

namespace cmunet {

namespace {

constexpr DType kF64 = DType::kFloat64;

Tensor leaf(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

// Scalarizes `out` against fixed random weights so every element matters.
std::function<Tensor()> weighted(std::function<Tensor()> f, std::mt19937_64& rng) {
  Tensor probe_out;
  {
    NoGradGuard guard;
    probe_out = f();
  }
  const Tensor weights = Tensor::randn(probe_out.shape(), rng, probe_out.dtype());
  return [f = std::move(f), weights]() { return sum(mul(f(), weights)); };
}

void add_case(std::vector<GradCase>& cases, std::string name, std::function<Tensor()> f,
              std::vector<NamedTensor> wrt, std::mt19937_64& rng, int probes = 20) {
  cases.push_back({std::move(name), weighted(std::move(f), rng), std::move(wrt), probes});
}

LabelMap random_labels(std::int64_t b, std::int64_t h, std::int64_t w, std::int64_t k,
                       std::mt19937_64& rng) {
  LabelMap t{b, h, w, std::vector<std::int32_t>(static_cast<std::size_t>(b * h * w))};
  std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(k - 1));
  for (auto& v : t.values) v = pick(rng);
  return t;
}

template <class M>
std::vector<NamedTensor> params_of(const M& m) {
  return m.named_parameters();
}

}  // namespace

std::vector<GradCase> grad_cases(std::uint64_t seed, bool include_model) {
  std::mt19937_64 rng(seed);
  std::vector<GradCase> cases;
  auto randn = [&](Shape s, double sd = 1.0) { return leaf(Tensor::randn(std::move(s), rng, kF64, sd)); };

  {
    Tensor x = randn({3, 4, 5}), w = randn({6, 5}), b = randn({6});
    add_case(cases, "linear", [=] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}}, rng);
  }
  struct ConvCase {
    const char* name;
    Shape x, w;
    Conv2dOptions opts;
  };
  for (const ConvCase& cc : {ConvCase{"conv2d_3x3", {2, 3, 7, 7}, {4, 3, 3, 3}, {1, 1, 1}},
                             ConvCase{"conv2d_stride2", {2, 3, 8, 8}, {4, 3, 3, 3}, {2, 1, 1}},
                             ConvCase{"conv2d_depthwise", {2, 4, 6, 6}, {4, 1, 3, 3}, {1, 1, 4}},
                             ConvCase{"conv2d_grouped", {1, 4, 5, 5}, {6, 2, 3, 3}, {1, 1, 2}},
                             ConvCase{"conv2d_1x1", {2, 3, 4, 4}, {5, 3, 1, 1}, {1, 0, 1}},
                             ConvCase{"conv2d_7x7_stride2", {1, 3, 16, 16}, {4, 3, 7, 7}, {2, 3, 1}}}) {
    Tensor x = randn(cc.x), w = randn(cc.w, 0.5), b = randn({cc.w[0]});
    const auto opts = cc.opts;
    add_case(cases, cc.name, [=] { return conv2d(x, w, b, opts); }, {{"x", x}, {"w", w}, {"b", b}}, rng);
  }
  {
    Tensor x = randn({2, 3, 8, 8});
    add_case(cases, "pool_max", [=] { return pool2d(x, PoolKind::kMax, 3, 2, 1); }, {{"x", x}}, rng);
    add_case(cases, "pool_mean", [=] { return pool2d(x, PoolKind::kMean, 2, 2, 0); }, {{"x", x}}, rng);
    add_case(cases, "pool_global_mean", [=] { return pool2d(x, PoolKind::kGlobalMean); }, {{"x", x}}, rng);
    add_case(cases, "pool_global_max", [=] { return pool2d(x, PoolKind::kGlobalMax); }, {{"x", x}}, rng);
  }
  {
    Tensor x = randn({4, 8}), g = randn({8}), b = randn({8});
    add_case(cases, "layer_norm_last", [=] { return layer_norm(x, g, b, 1e-5); },
             {{"x", x}, {"gamma", g}, {"beta", b}}, rng);
    Tensor x4 = randn({2, 5, 3, 3}), g4 = randn({5}), b4 = randn({5});
    add_case(cases, "layer_norm_channel", [=] { return layer_norm(x4, g4, b4, 1e-5, 1); },
             {{"x", x4}, {"gamma", g4}, {"beta", b4}}, rng);
  }
  {
    Tensor x = randn({3, 4, 3, 3}), g = randn({4}), b = randn({4});
    auto rm = std::make_shared<Tensor>(Tensor::zeros({4}, kF64));
    auto rv = std::make_shared<Tensor>(Tensor::ones({4}, kF64));
    add_case(cases, "batch_norm_train",
             [=] { return batch_norm(x, g, b, *rm, *rv, true, 0.1, 1e-5); },
             {{"x", x}, {"gamma", g}, {"beta", b}}, rng);
    add_case(cases, "batch_norm_eval",
             [=] { return batch_norm(x, g, b, *rm, *rv, false, 0.1, 1e-5); },
             {{"x", x}, {"gamma", g}, {"beta", b}}, rng);
  }
  {
    Tensor x = randn({2, 4, 3, 3});
    const std::pair<const char*, Activation> acts[] = {
        {"silu", Activation::kSilu},       {"relu", Activation::kRelu},
        {"sigmoid", Activation::kSigmoid}, {"softplus", Activation::kSoftplus},
        {"exp", Activation::kExp},         {"softmax_channel", Activation::kSoftmaxChannel}};
    for (const auto& [name, kind] : acts) {
      const auto k = kind;
      add_case(cases, name, [=] { return activation(k, x); }, {{"x", x}}, rng);
    }
  }
  {
    Tensor a = randn({2, 3, 4, 4}), b = randn({2, 3, 1, 1}), c = randn({2, 1, 4, 4}),
           d = randn({2, 3, 4, 4});
    add_case(cases, "add_broadcast", [=] { return add(a, b); }, {{"a", a}, {"b", b}}, rng);
    add_case(cases, "sub_broadcast", [=] { return sub(a, c); }, {{"a", a}, {"c", c}}, rng);
    add_case(cases, "mul_broadcast", [=] { return mul(a, b); }, {{"a", a}, {"b", b}}, rng);
    add_case(cases, "mul_spatial_map", [=] { return mul(a, c); }, {{"a", a}, {"c", c}}, rng);
    add_case(cases, "mul_equal", [=] { return mul(a, d); }, {{"a", a}, {"d", d}}, rng);
    add_case(cases, "scale", [=] { return scale(a, -1.7); }, {{"a", a}}, rng);
  }
  {
    Tensor x = randn({2, 3, 4, 5});
    add_case(cases, "resize_bilinear_up", [=] { return resize(x, 8, 10); }, {{"x", x}}, rng);
    add_case(cases, "resize_bilinear_down", [=] { return resize(x, 2, 3); }, {{"x", x}}, rng);
    add_case(cases, "resize_nearest", [=] { return resize(x, 7, 9, ResizeMode::kNearest); },
             {{"x", x}}, rng);
    add_case(cases, "channel_mean", [=] { return channel_reduce(x, ChannelReduce::kMean); },
             {{"x", x}}, rng);
    add_case(cases, "channel_max", [=] { return channel_reduce(x, ChannelReduce::kMax); },
             {{"x", x}}, rng);
    Tensor y = randn({2, 2, 4, 5});
    add_case(cases, "reshape_concat_select_stack",
             [=] {
               const Tensor cat = concat({x, y}, 1);
               return stack({select(reshape(cat, {2, 5, 20}), 1), select(reshape(cat, {2, 5, 20}), 0)});
             },
             {{"x", x}, {"y", y}}, rng);
    add_case(cases, "flip", [=] { return flip(flip(x, 3), 1); }, {{"x", x}}, rng);
    cases.push_back({"sum_mean", [=] { return add(sum(mul(x, x)), mean(x)); }, {{"x", x}}, 20});
  }
  {
    // Long enough for several chunks in the parallel scan.
    const std::int64_t B = 1, L = 600, D = 3, N = 2;
    Tensor x = randn({B, L, D});
    Tensor delta = leaf(Tensor::uniform({B, L, D}, rng, 0.01, 0.5, kF64));
    Tensor bs = randn({B, L, N}), cs = randn({B, L, N});
    Tensor a = leaf(Tensor::uniform({D, N}, rng, -2.0, -0.3, kF64));
    Tensor d = randn({D});
    const std::vector<NamedTensor> wrt{{"x", x}, {"delta", delta}, {"B", bs},
                                       {"C", cs}, {"A", a},         {"D", d}};
    add_case(cases, "selective_scan_seq",
             [=] { return ssm::selective_scan({x, delta, bs, cs}, a, d, ssm::ScanImpl::kSequential); },
             wrt, rng, 30);
    add_case(cases, "selective_scan_parallel",
             [=] { return ssm::selective_scan({x, delta, bs, cs}, a, d, ssm::ScanImpl::kParallel); },
             wrt, rng, 30);
  }
  {
    auto params = std::make_shared<ssm::SsmParams>(4, 3, kF64, rng);
    Tensor x = randn({2, 9, 4});
    auto wrt = params_of(*params);
    wrt.push_back({"x", x});
    add_case(cases, "ssm_projection_scan",
             [=] { return ssm::selective_scan_seq(ssm::project_delta_b_c(x, *params), *params); },
             wrt, rng, 24);
  }
  {
    Tensor x = randn({2, 3, 3, 4});
    add_case(cases, "cross_scan_merge",
             [=] { return ssm::cross_merge(mul(ssm::cross_scan(x), ssm::cross_scan(x)), 3, 4); },
             {{"x", x}}, rng);
    for (bool shared : {false, true}) {
      ssm::Ssm2dConfig sc;
      sc.channels = 4;
      sc.state_size = 3;
      sc.share_directions = shared;
      auto m = std::make_shared<ssm::Ssm2d>(sc, kF64, rng);
      Tensor xi = randn({1, 4, 3, 3});
      auto wrt = params_of(*m);
      wrt.push_back({"x", xi});
      add_case(cases, shared ? "ssm2d_shared" : "ssm2d", [=] { return m->forward(xi); }, wrt, rng,
               static_cast<int>(std::max<std::size_t>(20, wrt.size())));
    }
  }
  {
    auto cs = std::make_shared<CsAttention>(8, kF64, rng);
    Tensor x = randn({2, 8, 4, 4});
    auto wrt = params_of(*cs);
    wrt.push_back({"x", x});
    add_case(cases, "cs_attention", [=] { return cs->forward(x); }, wrt, rng, 20);
  }
  {
    CsMambaBlockConfig bc;
    bc.channels = 4;
    bc.state_size = 3;
    auto block = std::make_shared<CsMambaBlock>(bc, kF64, rng);
    Tensor x = randn({1, 4, 4, 4});
    auto wrt = params_of(*block);
    wrt.push_back({"x", x});
    add_case(cases, "csmamba_block", [=] { return block->forward(x); }, wrt, rng,
             static_cast<int>(std::max<std::size_t>(20, wrt.size())));
  }
  {
    MsaaConfig mc{12, 4, {3, 5, 7}, 7};
    auto m = std::make_shared<Msaa>(4, 2, 8, mc, kF64, rng);
    Tensor fp = randn({1, 2, 8, 8}), fc = randn({1, 4, 4, 4}), fn = randn({1, 8, 2, 2});
    auto wrt = params_of(*m);
    wrt.push_back({"f_prev", fp});
    wrt.push_back({"f_cur", fc});
    wrt.push_back({"f_next", fn});
    add_case(cases, "msaa", [=] { return m->forward(fp, fc, fn); }, wrt, rng,
             static_cast<int>(std::max<std::size_t>(20, wrt.size())));
  }
  {
    Tensor logits = randn({2, 4, 3, 3});
    const LabelMap t = random_labels(2, 3, 3, 4, rng);
    cases.push_back({"cross_entropy", [=] { return cross_entropy(logits, t); }, {{"logits", logits}}, 20});
    cases.push_back({"dice_loss", [=] { return dice_loss(logits, t); }, {{"logits", logits}}, 20});
    Tensor aux = randn({2, 4, 2, 2});
    cases.push_back({"total_loss",
                     [=] {
                       ModelOutputs o{logits, {aux}};
                       return total_loss(o, t, 0.4).total;
                     },
                     {{"logits", logits}, {"aux", aux}},
                     20});
  }
  if (include_model) {
    ModelConfig mc = ModelConfig::mini();
    mc.dtype = kF64;
    auto model = std::make_shared<CmUnet>(mc, seed + 1);
    Tensor x = randn({2, 3, 64, 64});
    const LabelMap t = random_labels(2, 64, 64, mc.num_classes, rng);
    auto wrt = params_of(*model);
    wrt.push_back({"input", x});
    cases.push_back({"model_end_to_end",
                     [=] { return total_loss(model->forward(x), t, mc.aux_weight).total; }, wrt,
                     static_cast<int>(wrt.size())});
  }
  return cases;
}

ScanProblem random_scan_problem(std::mt19937_64& rng, DType dtype, std::int64_t max_batch,
                                std::int64_t max_length, std::int64_t max_inner,
                                std::int64_t max_state) {
  auto pick = [&](std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(1, hi)(rng); };
  ScanProblem p;
  p.dims = {pick(max_batch), pick(max_length), pick(max_inner), pick(max_state)};
  const auto [B, L, D, N] = p.dims;
  p.x = Tensor::randn({B, L, D}, rng, dtype);
  p.delta = Tensor::uniform({B, L, D}, rng, 1e-3, 0.5, dtype);
  p.a = Tensor::uniform({D, N}, rng, -static_cast<double>(N) - 1.0, -0.05, dtype);
  p.b = Tensor::randn({B, L, N}, rng, dtype);
  p.c = Tensor::randn({B, L, N}, rng, dtype);
  p.d = Tensor::randn({D}, rng, dtype);
  return p;
}

double scan_parity_error(const ScanProblem& p) {
  NoGradGuard guard;
  const ssm::ScanInputs in{p.x, p.delta, p.b, p.c};
  const Tensor ys = ssm::selective_scan(in, p.a, p.d, ssm::ScanImpl::kSequential);
  const Tensor yp = ssm::selective_scan(in, p.a, p.d, ssm::ScanImpl::kParallel);
  double diff = 0, mag = 0;
  for (std::int64_t i = 0; i < ys.numel(); ++i) {
    diff = std::max(diff, std::abs(yp.at(i) - ys.at(i)));
    mag = std::max(mag, std::abs(ys.at(i)));
  }
  return diff / std::max(mag, 1e-300);
}

std::vector<CheckOutcome> scan_checks(int instances, std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  std::mt19937_64 rng(seed);
  double worst32 = 0, worst64 = 0;
  for (int i = 0; i < instances; ++i) {
    const ScanProblem p64 = random_scan_problem(rng, kF64, 4, 4096, 32, 16);
    ScanProblem p32 = p64;
    for (Tensor* t : {&p32.x, &p32.delta, &p32.a, &p32.b, &p32.c, &p32.d}) *t = t->to(DType::kFloat32);
    worst64 = std::max(worst64, scan_parity_error(p64));
    worst32 = std::max(worst32, scan_parity_error(p32));
  }
  out.push_back({"scan parity real32 (" + std::to_string(instances) + " instances)", worst32 <= 1e-5,
                 worst32, 1e-5, ""});
  out.push_back({"scan parity real64 (" + std::to_string(instances) + " instances)",
                 worst64 <= 1e-10, worst64, 1e-10, ""});

  // Reverse-mode kernels: parallel against sequential with forced chunking.
  double worst_grad = 0;
  for (int i = 0; i < 12; ++i) {
    const ScanProblem p = random_scan_problem(rng, kF64, 2, 700, 6, 4);
    const auto& dims = p.dims;
    const ssm::ScanBuffers<double> buf{p.x.data<double>().data(), p.delta.data<double>().data(),
                                       p.a.data<double>().data(), p.b.data<double>().data(),
                                       p.c.data<double>().data(), p.d.data<double>().data()};
    const Tensor gy = Tensor::randn(p.x.shape(), rng, kF64);
    auto run = [&](bool parallel) {
      std::vector<Tensor> g;
      for (const Tensor* t : {&p.x, &p.delta, &p.a, &p.b, &p.c, &p.d}) {
        g.push_back(Tensor::zeros(t->shape(), kF64));
      }
      const ssm::ScanGradBuffers<double> gb{g[0].data<double>().data(), g[1].data<double>().data(),
                                            g[2].data<double>().data(), g[3].data<double>().data(),
                                            g[4].data<double>().data(), g[5].data<double>().data()};
      if (parallel) {
        ssm::scan_backward_parallel(dims, buf, gy.data<double>().data(), gb, 1 + i % 7);
      } else {
        ssm::scan_backward_seq(dims, buf, gy.data<double>().data(), gb);
      }
      return g;
    };
    const auto gs = run(false), gp = run(true);
    for (std::size_t k = 0; k < gs.size(); ++k) {
      double diff = 0, mag = 0;
      for (std::int64_t j = 0; j < gs[k].numel(); ++j) {
        diff = std::max(diff, std::abs(gs[k].at(j) - gp[k].at(j)));
        mag = std::max(mag, std::abs(gs[k].at(j)));
      }
      worst_grad = std::max(worst_grad, diff / std::max(mag, 1e-300));
    }
  }
  out.push_back({"scan backward parity real64", worst_grad <= 1e-10, worst_grad, 1e-10, ""});

  // Degenerate length: one step.
  {
    ScanProblem p = random_scan_problem(rng, kF64, 3, 1, 8, 4);
    const double err = scan_parity_error(p);
    out.push_back({"scan L=1", err == 0.0, err, 0.0, ""});
  }
  // A = 0: a_bar = 1 and the scan is a cumulative sum of delta * B * x.
  {
    ScanProblem p = random_scan_problem(rng, kF64, 2, 300, 4, 3);
    p.a = Tensor::zeros(p.a.shape(), kF64);
    p.d = Tensor::zeros(p.d.shape(), kF64);
    const auto [B, L, D, N] = p.dims;
    NoGradGuard guard;
    const Tensor y = ssm::selective_scan({p.x, p.delta, p.b, p.c}, p.a, p.d, ssm::ScanImpl::kParallel);
    double diff = 0, mag = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t dd = 0; dd < D; ++dd) {
        std::vector<double> h(static_cast<std::size_t>(N), 0.0);
        for (std::int64_t l = 0; l < L; ++l) {
          double acc = 0;
          for (std::int64_t n = 0; n < N; ++n) {
            h[static_cast<std::size_t>(n)] += p.delta.at((b * L + l) * D + dd) *
                                              p.b.at((b * L + l) * N + n) * p.x.at((b * L + l) * D + dd);
            acc += p.c.at((b * L + l) * N + n) * h[static_cast<std::size_t>(n)];
          }
          diff = std::max(diff, std::abs(acc - y.at((b * L + l) * D + dd)));
          mag = std::max(mag, std::abs(acc));
        }
      }
    }
    const double err = diff / std::max(mag, 1e-300);
    out.push_back({"scan A=0 cumulative sum", err <= 1e-10, err, 1e-10, ""});
  }
  // Associativity of the affine composition.
  {
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const ssm::AffineScanElement e1{u(rng), u(rng)}, e2{u(rng), u(rng)}, e3{u(rng), u(rng)};
      const double h = u(rng);
      const double left = ssm::then(ssm::then(e1, e2), e3).apply(h);
      const double right = ssm::then(e1, ssm::then(e2, e3)).apply(h);
      worst = std::max(worst, std::abs(left - right));
    }
    out.push_back({"affine composition associativity", worst <= 1e-12, worst, 1e-12, ""});
  }
  return out;
}

std::vector<CheckOutcome> grad_checks(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (const auto& gc : grad_cases(seed)) {
    const GradCheckResult r = check_gradients(gc.loss, gc.wrt, gc.probes, 1e-5, rng);
    out.push_back({"grad " + gc.name + " (" + std::to_string(r.probes) + " probes)",
                   r.max_rel_error <= 1e-4 && r.probes >= 20, r.max_rel_error, 1e-4, r.worst});
  }
  return out;
}

std::vector<CheckOutcome> metric_checks(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const auto K = std::uniform_int_distribution<std::int64_t>(2, 8)(rng);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(K * K));
    std::uniform_int_distribution<std::int64_t> cnt(0, 50);
    for (auto& c : counts) c = (rng() % 5 == 0) ? 0 : cnt(rng);
    counts[0] += 1;
    const auto cm = ConfusionMatrix::from_counts(K, counts);
    const MetricReport r = compute_metrics(cm, {});
    // Integer-exact evaluation, rounded once.
    long double f1_sum = 0, iou_sum = 0;
    std::int64_t trace = 0, total = 0;
    for (std::int64_t c = 0; c < K; ++c) {
      std::int64_t tp = cm.at(c, c), row = 0, col = 0;
      for (std::int64_t j = 0; j < K; ++j) {
        row += cm.at(c, j);
        col += cm.at(j, c);
      }
      const std::int64_t fp = col - tp, fn = row - tp;
      const long double f1 = 2 * tp + fp + fn == 0 ? 0.0L
                                                   : static_cast<long double>(2 * tp) / (2 * tp + fp + fn);
      const long double iou = tp + fp + fn == 0 ? 0.0L : static_cast<long double>(tp) / (tp + fp + fn);
      if (tp == 0) {
        worst = std::max(worst, std::abs(r.per_class[static_cast<std::size_t>(c)].f1));
      } else {
        worst = std::max(worst, static_cast<double>(std::abs(r.per_class[static_cast<std::size_t>(c)].f1 - f1)));
      }
      worst = std::max(worst, static_cast<double>(std::abs(r.per_class[static_cast<std::size_t>(c)].iou - iou)));
      f1_sum += f1;
      iou_sum += iou;
      trace += tp;
      total += row;
    }
    worst = std::max(worst, static_cast<double>(std::abs(r.mF1 - f1_sum / K)));
    worst = std::max(worst, static_cast<double>(std::abs(r.mIoU - iou_sum / K)));
    worst = std::max(worst, static_cast<double>(std::abs(r.OA - static_cast<long double>(trace) / total)));
  }
  out.push_back({"metrics vs integer-exact evaluation (200 matrices)", worst <= 1e-12, worst, 1e-12, ""});
  {
    const auto cm = ConfusionMatrix::from_counts(2, {2, 1, 1, 2});
    const auto r = compute_metrics(cm, {});
    const double err = std::max({std::abs(r.per_class[0].f1 - 2.0 / 3.0),
                                 std::abs(r.per_class[0].iou - 0.5), std::abs(r.OA - 2.0 / 3.0)});
    out.push_back({"metrics worked example [[2,1],[1,2]]", err <= 1e-15, err, 1e-15, ""});
  }
  return out;
}

std::vector<CheckOutcome> run_check_suite(const std::string& suite, std::uint64_t seed,
                                          std::ostream& out) {
  std::vector<CheckOutcome> all;
  auto run = [&](const char* name, auto fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = fn();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& r : results) {
      out << (r.passed ? "PASS " : "FAIL ") << r.name << "  measured " << std::setprecision(3)
          << std::scientific << r.measured << "  tolerance " << r.tolerance << std::defaultfloat;
      if (!r.passed && !r.detail.empty()) out << "  worst " << r.detail;
      out << '\n';
    }
    out << "suite " << name << " finished in " << std::fixed << std::setprecision(1) << secs
        << " s\n" << std::defaultfloat;
    all.insert(all.end(), results.begin(), results.end());
  };
  const bool any = suite == "all";
  if (any || suite == "scan") run("scan", [&] { return scan_checks(100, seed); });
  if (any || suite == "metrics") run("metrics", [&] { return metric_checks(seed); });
  if (any || suite == "grads") run("grads", [&] { return grad_checks(seed); });
  if (!any && suite != "scan" && suite != "metrics" && suite != "grads") {
    throw ConfigError("unknown suite '" + suite + "'");
  }
  return all;
}

}  // namespace cmunet
