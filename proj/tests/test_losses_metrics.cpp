#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cmunet/losses.hpp"
#include "cmunet/metrics.hpp"
#include "cmunet/optim.hpp"
#include "cmunet/trainer.hpp"

using namespace cmunet;

namespace {

constexpr DType f64 = DType::kFloat64;

LabelMap labels(std::int64_t b, std::int64_t h, std::int64_t w, std::vector<std::int32_t> v) {
  return {b, h, w, std::move(v)};
}

LabelMap random_labels(std::int64_t b, std::int64_t h, std::int64_t w, int k, std::mt19937_64& rng) {
  LabelMap t{b, h, w, std::vector<std::int32_t>(static_cast<std::size_t>(b * h * w))};
  for (auto& v : t.values) v = static_cast<std::int32_t>(rng() % k);
  return t;
}

}  // namespace

TEST_SUITE("losses-metrics") {

TEST_CASE("cross entropy matches a direct log-softmax") {
  std::mt19937_64 rng(1);
  const Tensor logits = Tensor::randn({2, 3, 2, 2}, rng, f64, 2.0);
  const LabelMap t = random_labels(2, 2, 2, 3, rng);
  long double acc = 0;
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t p = 0; p < 4; ++p) {
      long double z = 0;
      for (std::int64_t k = 0; k < 3; ++k) z += std::exp(static_cast<long double>(logits.at((b * 3 + k) * 4 + p)));
      const auto y = t.values[static_cast<std::size_t>(b * 4 + p)];
      acc += std::log(z) - logits.at((b * 3 + y) * 4 + p);
    }
  CHECK(cross_entropy(logits, t).item() == doctest::Approx(static_cast<double>(acc / 8)).epsilon(1e-13));
}

TEST_CASE("cross entropy of uniform logits is ln K") {
  const LabelMap t = labels(1, 1, 3, {0, 1, 3});
  CHECK(std::abs(cross_entropy(Tensor::zeros({1, 4, 1, 3}), t).item() - std::log(4.0)) < 1e-6);
}

TEST_CASE("dice loss: direct formula and perfect prediction") {
  std::mt19937_64 rng(2);
  const Tensor logits = Tensor::randn({2, 3, 3, 3}, rng, f64);
  const LabelMap t = random_labels(2, 3, 3, 3, rng);
  const Tensor p = softmax_channel(logits);
  long double mean = 0;
  for (std::int64_t k = 0; k < 3; ++k) {
    long double inter = 0, ps = 0, ys = 0;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < 9; ++i) {
        const long double pv = p.at((b * 3 + k) * 9 + i);
        const long double yv = t.values[static_cast<std::size_t>(b * 9 + i)] == k ? 1 : 0;
        inter += pv * yv;
        ps += pv;
        ys += yv;
      }
    mean += (2 * inter + kDiceEpsilon) / (ps + ys + kDiceEpsilon);
  }
  CHECK(dice_loss(logits, t).item() == doctest::Approx(static_cast<double>(1 - mean / 3)).epsilon(1e-12));

  Tensor perfect = Tensor::zeros({2, 3, 3, 3}, f64);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 9; ++i)
      perfect.set((b * 3 + t.values[static_cast<std::size_t>(b * 9 + i)]) * 9 + i, 60.0);
  CHECK(dice_loss(perfect, t).item() <= 1e-5);
}

TEST_CASE("labels out of range are data errors") {
  const LabelMap t = labels(1, 1, 2, {0, 5});
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 3, 1, 2}), t), DataError);
}

TEST_CASE("nearest label downsampling reads floor(i * H / h)") {
  LabelMap t{1, 4, 4, {}};
  for (int i = 0; i < 16; ++i) t.values.push_back(i);
  const LabelMap d = downsample_labels(t, 2, 2);
  CHECK(d.values == std::vector<std::int32_t>{0, 2, 8, 10});
}

TEST_CASE("total loss composition") {
  std::mt19937_64 rng(3);
  const Tensor f = Tensor::randn({1, 3, 8, 8}, rng, f64);
  const Tensor a1 = Tensor::randn({1, 3, 2, 2}, rng, f64), a2 = Tensor::randn({1, 3, 4, 4}, rng, f64);
  const LabelMap t = random_labels(1, 8, 8, 3, rng);
  const double principal = cross_entropy(f, t).item() + dice_loss(f, t).item();
  const LossBreakdown only = total_loss({f, {}}, t, 0.4);
  CHECK(only.total.item() == principal);
  CHECK(only.aux_mean == 0.0);
  const LossBreakdown both = total_loss({f, {a1, a2}}, t, 0.4);
  auto part = [&](const Tensor& a) {
    const LabelMap d = downsample_labels(t, a.dim(2), a.dim(3));
    return cross_entropy(a, d).item() + dice_loss(a, d).item();
  };
  const double aux = (part(a1) + part(a2)) / 2;
  CHECK(both.aux_mean == doctest::Approx(aux));
  CHECK(both.total.item() == doctest::Approx(principal + 0.4 * aux));
}

TEST_CASE("confusion matrix updates, merges and validates") {
  ConfusionMatrix cm(3);
  const std::vector<std::int32_t> pred{0, 1, 2, 2}, truth{0, 2, 2, 1};
  cm.update(pred, truth);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(2, 1) == 1);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.total() == 4);
  ConfusionMatrix other(3);
  other.update(pred, truth);
  cm.merge(other);
  CHECK(cm.total() == 8);
  const std::vector<std::int32_t> bad{3};
  const std::vector<std::int32_t> one{0};
  CHECK_THROWS_AS(cm.update(bad, one), DataError);
  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix(3), {}), DataError);
}

TEST_CASE("worked example [[2,1],[1,2]]") {
  const MetricReport r = compute_metrics(ConfusionMatrix::from_counts(2, {2, 1, 1, 2}), {});
  CHECK(r.per_class[0].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.per_class[0].iou == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.OA == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("included classes restrict the means, not OA") {
  const auto cm = ConfusionMatrix::from_counts(3, {5, 0, 0, 0, 3, 1, 0, 2, 4});
  const MetricReport all = compute_metrics(cm, {});
  const MetricReport sub = compute_metrics(cm, {1, 2});
  CHECK(sub.mIoU == doctest::Approx((all.per_class[1].iou + all.per_class[2].iou) / 2));
  CHECK(sub.OA == all.OA);
  CHECK(sub.included_classes == std::vector<std::int64_t>{1, 2});
}

TEST_CASE("argmax ties go to the lowest index") {
  const LabelMap m = argmax_classes(Tensor::zeros({1, 3, 1, 2}));
  CHECK(m.values == std::vector<std::int32_t>{0, 0});
}

TEST_CASE("report json round trip is lossless") {
  const auto cm = ConfusionMatrix::from_counts(3, {7, 1, 2, 0, 9, 3, 4, 4, 11});
  const MetricReport r = compute_metrics(cm, {0, 2});
  const auto j = report_to_json(r);
  for (const char* key : {"per_class", "included_classes", "mF1", "mIoU", "OA", "confusion_matrix"}) {
    CHECK(j.contains(key));
  }
  const MetricReport back = report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(report_to_json(back) == j);
  CHECK(back.mIoU == r.mIoU);
  CHECK(back.confusion == cm);
}

TEST_CASE("adamw step matches the closed form") {
  Tensor w = Tensor::from_values({2, 1}, {1.0, -2.0}, f64);
  Tensor b = Tensor::from_values({1}, {0.5}, f64);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  AdamW opt({{"w", w}, {"b", b}}, {0.9, 0.999, 1e-8, 0.1});
  CHECK(opt.decays("w"));
  CHECK_FALSE(opt.decays("b"));
  backward(add(sum(mul(w, w)), sum(b)));
  opt.step(0.01);
  // first step: m_hat = g, v_hat = g^2, update = sign(g) up to eps
  const double g0 = 2.0, g1 = -4.0;
  CHECK(w.at(0) == doctest::Approx(1.0 * (1 - 0.001) - 0.01 * g0 / (std::abs(g0) + 1e-8)));
  CHECK(w.at(1) == doctest::Approx(-2.0 * (1 - 0.001) - 0.01 * g1 / (std::abs(g1) + 1e-8)));
  CHECK(b.at(0) == doctest::Approx(0.5 - 0.01 / (1 + 1e-8)));
  CHECK(opt.steps() == 1);
  CHECK(opt.state().size() == 4);
}

TEST_CASE("a_log is excluded from weight decay") {
  Tensor a = Tensor::ones({2, 2}, f64);
  AdamW opt({{"decoder1.ssm.a_log", a}}, {});
  CHECK_FALSE(opt.decays("decoder1.ssm.a_log"));
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(6e-4, 0, 100) == 6e-4);
  CHECK(cosine_lr(6e-4, 99, 100) <= 1e-2 * 6e-4);
  CHECK(cosine_lr(6e-4, 50, 101) == doctest::Approx(3e-4));
}

TEST_CASE("confusion updates commute") {
  std::mt19937_64 rng(8);
  std::vector<LabelMap> preds, truths;
  for (int i = 0; i < 5; ++i) {
    preds.push_back(random_labels(1, 4, 4, 4, rng));
    truths.push_back(random_labels(1, 4, 4, 4, rng));
  }
  std::vector<int> order{0, 1, 2, 3, 4};
  ConfusionMatrix ref(4);
  for (int i : order) ref.update(preds[i].values, truths[i].values);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    ConfusionMatrix cm(4);
    for (int i : order) cm.update(preds[i].values, truths[i].values);
    CHECK(cm == ref);
  }
}

TEST_CASE("iou never exceeds f1 and scores stay in [0,1]") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::int64_t> counts(16);
    for (auto& c : counts) c = static_cast<std::int64_t>(rng() % 20);
    counts[0] += 1;
    const MetricReport r = compute_metrics(ConfusionMatrix::from_counts(4, counts), {});
    for (const auto& c : r.per_class) {
      CHECK(c.iou <= c.f1);
      CHECK(c.iou >= 0.0);
      CHECK(c.f1 <= 1.0);
    }
    CHECK(r.mIoU <= r.mF1);
    CHECK(r.OA <= 1.0);
  }
}

TEST_CASE("full-batch training halves the loss in 50 steps") {
  SynthOptions so;
  so.size = 32;
  std::vector<SegSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(synth_sample(i, so));
  ModelConfig mc = ModelConfig::mini();
  CmUnet model(mc, 11);
  model.set_training(true);
  const Batch batch = make_batch(samples, mc.dtype);
  AdamW opt(model.named_parameters(), {});
  double first = 0, prev = 0;
  bool monotone = true;
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    const LossBreakdown l = total_loss(model.forward(batch.images), batch.labels, 0.4);
    const double v = l.total.item();
    if (step == 0) first = v;
    else if (v >= prev) monotone = false;
    prev = v;
    backward(l.total);
    opt.step(1e-3);
  }
  const double last = total_loss(model.forward(batch.images), batch.labels, 0.4).total.item();
  CHECK(monotone);
  CHECK(last < prev);
  CHECK(last < 0.5 * first);
}

}  // TEST_SUITE
