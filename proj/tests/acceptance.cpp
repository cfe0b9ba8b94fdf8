// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `cmunet_acceptance 1 4`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "cmunet/checkpoint.hpp"
#include "cmunet/checks.hpp"
#include "cmunet/dataset.hpp"
#include "cmunet/image_io.hpp"
#include "cmunet/losses.hpp"
#include "cmunet/metrics.hpp"
#include "cmunet/model.hpp"
#include "cmunet/parallel.hpp"
#include "cmunet/ssm.hpp"
#include "cmunet/trainer.hpp"
#include "oracles.hpp"

using namespace cmunet;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

fs::path workdir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmunet_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 1: parallel scan equals the sequential recurrence.
Verdict scan_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst32 = 0, worst64 = 0;
  for (int i = 0; i < 100; ++i) {
    const ScanProblem p64 = random_scan_problem(rng, DType::kFloat64, 4, 4096, 32, 16);
    ScanProblem p32 = p64;
    for (Tensor* t : {&p32.x, &p32.delta, &p32.a, &p32.b, &p32.c, &p32.d}) *t = t->to(DType::kFloat32);
    worst64 = std::max(worst64, scan_parity_error(p64));
    worst32 = std::max(worst32, scan_parity_error(p32));
  }
  const double secs = seconds_since(t0);
  return {worst32 <= 1e-5 && worst64 <= 1e-10 && secs < 60,
          "100 instances, rel Linf real32 " + fmt(worst32) + " (<= 1e-5), real64 " + fmt(worst64) +
              " (<= 1e-10), " + fmt(secs) + " s (< 60)"};
}

// 2: every case of the gradient catalogue against central differences,
// probed here independently of the library's own checker.
Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const double h = 1e-5;
  std::mt19937_64 rng(77);
  double worst = 0, worst_ratio = 0, worst_large = 0;
  std::string worst_name;
  int cases = 0, min_probes = std::numeric_limits<int>::max();
  for (auto& gc : grad_cases(31)) {
    for (auto& w : gc.wrt) {
      w.tensor.zero_grad();
      w.tensor.set_requires_grad(true);
    }
    const Tensor loss = gc.loss();
    const double f0 = loss.item();
    loss.backward();
    // a central difference cannot see below a few dozen ulps of the loss
    const double resolution = 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / h;
    const int probes = std::max<int>(20, gc.probes);
    for (int p = 0; p < probes; ++p) {
      Tensor t = gc.wrt[static_cast<std::size_t>(p) % gc.wrt.size()].tensor;
      const auto idx = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(t.numel()));
      const double analytic = t.has_grad() ? t.grad().at(idx) : 0.0;
      const double v = t.at(idx);
      double up, down;
      {
        NoGradGuard g;
        t.set(idx, v + h);
        up = gc.loss().item();
        t.set(idx, v - h);
        down = gc.loss().item();
        t.set(idx, v);
      }
      const double numeric = (up - down) / (2 * h);
      const double diff = std::abs(analytic - numeric);
      worst_ratio = std::max(worst_ratio, diff / resolution);
      if (std::abs(analytic) >= 1e-3) worst_large = std::max(worst_large, diff / std::abs(analytic));
      const double rel = diff <= resolution ? 0.0 : diff / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = gc.name;
      }
    }
    min_probes = std::min(min_probes, probes);
    ++cases;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && min_probes >= 20 && secs < 120,
          std::to_string(cases) + " cases incl. mini model at 64x64, >= " + std::to_string(min_probes) +
              " probes each, max rel error " + fmt(worst) + (worst_name.empty() ? "" : " (" + worst_name + ")") +
              " (<= 1e-4; diffs within " + fmt(worst_ratio) + "x the FD roundoff floor, raw rel " +
              fmt(worst_large) + " where |grad| >= 1e-3), " + fmt(secs) + " s (< 120)"};
}

// 3: both discretization branches meet at the threshold; a -> 0 limit.
Verdict discretization_limit() {
  double worst = 0;
  for (double z : {-ssm::kSeriesThreshold, ssm::kSeriesThreshold}) {
    for (double side : {std::nextafter(z, 0.0), z, std::nextafter(z, 2 * z)}) {
      const long double ex = std::expm1(static_cast<long double>(side)) / side;
      worst = std::max(worst, static_cast<double>(std::abs(ssm::zoh_phi(side) - ex) / ex));
    }
  }
  double limit = 0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2), dt(1e-3, 1.0);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> a(4, 0.0), b{u(rng), u(rng), u(rng), u(rng)};
    const double delta = dt(rng);
    const auto d = ssm::discretize(a, b, delta);
    for (int n = 0; n < 4; ++n) {
      limit = std::max(limit, std::abs(d.a_bar[n] - 1.0));
      limit = std::max(limit, std::abs(d.b_bar[n] - delta * b[n]));
    }
  }
  return {worst <= 1e-9 && limit <= 1e-12,
          "branch mismatch at |z| = 1e-4: " + fmt(worst) + " rel (<= 1e-9); a = 0 limit error " + fmt(limit) +
              " (<= 1e-12)"};
}

// 4: metrics against exact integer arithmetic plus the worked example.
Verdict metrics_oracle() {
  std::mt19937_64 rng(11);
  double worst = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::int64_t K = 2 + static_cast<std::int64_t>(rng() % 7);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(K * K));
    for (auto& c : counts) c = rng() % 4 == 0 ? 0 : static_cast<std::int64_t>(rng() % 1000);
    counts[rng() % counts.size()] += 1;
    const auto cm = ConfusionMatrix::from_counts(K, counts);
    const MetricReport r = compute_metrics(cm, {});
    // F1 = 2PR/(P+R) = 2TP/(2TP+FP+FN); IoU = TP/(TP+FP+FN)
    long double f1_sum = 0, iou_sum = 0;
    std::int64_t trace = 0, total = 0;
    for (std::int64_t k = 0; k < K; ++k) {
      std::int64_t tp = counts[static_cast<std::size_t>(k * K + k)], fp = 0, fn = 0;
      for (std::int64_t j = 0; j < K; ++j) {
        if (j == k) continue;
        fn += counts[static_cast<std::size_t>(k * K + j)];
        fp += counts[static_cast<std::size_t>(j * K + k)];
      }
      const oracle::Rational f1{2 * tp, 2 * tp + fp + fn}, iou{tp, tp + fp + fn};
      worst = std::max(worst, static_cast<double>(std::abs(r.per_class[static_cast<std::size_t>(k)].f1 - f1.value())));
      worst = std::max(worst, static_cast<double>(std::abs(r.per_class[static_cast<std::size_t>(k)].iou - iou.value())));
      f1_sum += f1.value();
      iou_sum += iou.value();
      trace += tp;
      for (std::int64_t j = 0; j < K; ++j) total += counts[static_cast<std::size_t>(k * K + j)];
    }
    worst = std::max(worst, static_cast<double>(std::abs(r.mF1 - f1_sum / K)));
    worst = std::max(worst, static_cast<double>(std::abs(r.mIoU - iou_sum / K)));
    worst = std::max(worst, static_cast<double>(std::abs(r.OA - oracle::Rational{trace, total}.value())));
  }
  const MetricReport ex = compute_metrics(ConfusionMatrix::from_counts(2, {2, 1, 1, 2}), {});
  const double ex_err = std::max({std::abs(ex.per_class[0].f1 - 2.0 / 3.0), std::abs(ex.per_class[0].iou - 0.5),
                                  std::abs(ex.OA - 2.0 / 3.0)});
  // one rounding of each exact quotient, plus one for the mean
  return {worst <= 4 * std::numeric_limits<double>::epsilon() && ex_err <= std::numeric_limits<double>::epsilon(),
          "500 random matrices K <= 8, max deviation from exact " + fmt(worst) + "; worked example error " +
              fmt(ex_err)};
}

// 5: loss identities.
Verdict loss_identities() {
  std::mt19937_64 rng(5);
  const std::int64_t K = 4, H = 8, W = 8;
  LabelMap t{2, H, W, std::vector<std::int32_t>(2 * H * W)};
  for (auto& v : t.values) v = static_cast<std::int32_t>(rng() % K);
  Tensor perfect = Tensor::full({2, K, H, W}, -40.0, DType::kFloat64);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < H * W; ++i)
      perfect.set((b * K + t.values[static_cast<std::size_t>(b * H * W + i)]) * H * W + i, 40.0);
  const double dice = dice_loss(perfect, t).item();
  const double ce = cross_entropy(Tensor::zeros({2, K, H, W}, DType::kFloat32), t).item();
  const Tensor logits = Tensor::randn({2, K, H, W}, rng, DType::kFloat64);
  const LossBreakdown only = total_loss({logits, {}}, t, 0.4);
  const double principal = cross_entropy(logits, t).item() + dice_loss(logits, t).item();
  const bool exact = only.total.item() == principal;
  return {dice <= 1e-5 && std::abs(ce - std::log(4.0)) <= 1e-6 && exact,
          "dice(one-hot) " + fmt(dice) + " (<= 1e-5); |ce(uniform) - ln 4| " + fmt(std::abs(ce - std::log(4.0))) +
              " (<= 1e-6); total == principal without aux: " + (exact ? "yes" : "no")};
}

// 6: parameter budget of the full-size configuration.
Verdict parameter_budget() {
  const ModelConfig cfg = ModelConfig::paper_scale();
  CmUnet model(cfg, 1);
  const auto total = count_parameters(model);
  const auto enc = count_parameters(*model.encoder);
  const auto trunk = oracle::resnet_trunk_parameters(cfg.in_channels, cfg.encoder_channels, cfg.blocks_per_stage);
  const double rel_total = std::abs(static_cast<double>(total) / 12.89e6 - 1.0);
  const double rel_enc = std::abs(static_cast<double>(enc) / static_cast<double>(trunk) - 1.0);
  return {rel_total <= 0.15 && rel_enc <= 0.02,
          "total " + std::to_string(total) + " vs 12.89 M (off " + fmt(100 * rel_total) + "%, <= 15%); encoder " +
              std::to_string(enc) + " vs trunk " + std::to_string(trunk) + " (off " + fmt(100 * rel_enc) +
              "%, <= 2%)"};
}

fs::path synthetic_dataset(const std::string& name, std::int64_t num, std::int64_t size) {
  const fs::path dir = workdir(name);
  SynthOptions o;
  o.num = num;
  o.size = size;
  o.classes = 4;
  o.seed = 42;
  synth_generate(dir.string(), o);
  return dir;
}

// 7: desk-scale training of the mini model.
Verdict desk_training() {
  const fs::path data = synthetic_dataset("train", 250, 64);
  RunConfig cfg;
  cfg.data.root = data.string();
  const auto t0 = Clock::now();
  std::ostringstream progress;
  const TrainResult r = train(cfg, (data / "model.bin").string(), &progress);
  const double secs = seconds_since(t0);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, e.val_mIoU);
  const double first = r.history.front().train_loss, last = r.history.back().train_loss;
  const double drop = 1.0 - last / first;
  return {r.history.size() == 30 && best >= 0.85 && secs <= 900 && drop >= 0.5,
          "200/50 split, " + std::to_string(r.history.size()) + " epochs, best val mIoU " + fmt(best) +
              " (>= 0.85), final " + fmt(r.history.back().val_mIoU) + ", " + fmt(secs) + " s (<= 900) on " +
              std::to_string(num_threads()) + " thread(s), train loss " + fmt(first) + " -> " + fmt(last) +
              " (drop " + fmt(100 * drop) + "%, >= 50%)"};
}

// 8: the four ablation combinations all train and report.
Verdict ablations() {
  const fs::path data = synthetic_dataset("ablation", 60, 64);
  std::set<std::string> key_sets;
  std::vector<std::string> summary;
  std::int64_t full = 0, no_msaa = 0;
  bool ok = true;
  for (bool msaa : {true, false})
    for (bool multi : {true, false}) {
      RunConfig cfg;
      cfg.data.root = data.string();
      cfg.train.epochs = 2;
      cfg.model.use_msaa = msaa;
      cfg.model.multi_output = multi;
      const std::string tag = std::string(msaa ? "msaa" : "no-msaa") + "_" + (multi ? "aux" : "no-aux");
      try {
        const TrainResult r = train(cfg, (data / (tag + ".bin")).string(), nullptr);
        const json j = report_to_json(r.final_report);
        std::string keys;
        for (const auto& [k, v] : j.items()) keys += k + ",";
        keys += std::to_string(j["per_class"].size());
        key_sets.insert(keys);
        if (msaa && multi) full = r.parameters;
        if (!msaa && multi) no_msaa = r.parameters;
        summary.push_back(tag + " mIoU " + fmt(r.final_report.mIoU) + " params " + std::to_string(r.parameters));
      } catch (const std::exception& e) {
        ok = false;
        summary.push_back(tag + " failed: " + e.what());
      }
    }
  std::string detail;
  for (const auto& s : summary) detail += s + "; ";
  detail += "full " + std::to_string(full) + " > no-msaa " + std::to_string(no_msaa);
  return {ok && key_sets.size() == 1 && full > no_msaa, detail};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CMUNET_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 9: the parallel scan grows linearly with length.
Verdict linear_scaling() {
  const fs::path dir = workdir("bench");
  const fs::path rep = dir / "bench.json";
  const int code = run_cli("bench-scan --lengths 4096,8192,16384,32768 --channels 16 --state 8 --report " +
                               rep.string(),
                           dir / "bench.txt");
  if (code != 0) return {false, "bench-scan exited " + std::to_string(code) + ": " + slurp(dir / "bench.txt")};
  const json j = json::parse(slurp(rep));
  bool ok = j["ratios"].size() == 3;
  std::string detail = "parallel ratios";
  for (const auto& r : j["ratios"]) {
    const double v = r["parallel"].get<double>();
    ok = ok && v <= 2.6;
    detail += " " + std::to_string(r["to"].get<std::int64_t>()) + "/" + std::to_string(r["from"].get<std::int64_t>()) +
              "=" + fmt(v);
  }
  return {ok, detail + " (each <= 2.6), deterministic off, " +
                  std::to_string(j["environment"]["threads"].get<int>()) + " thread(s)"};
}

// 10: deterministic training is byte-reproducible; file formats round-trip.
Verdict determinism_round_trips() {
  const fs::path data = synthetic_dataset("determinism", 24, 32);
  RunConfig cfg;
  cfg.data.root = data.string();
  cfg.data.crop = 32;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 4;
  cfg.train.deterministic = true;
  train(cfg, (data / "a.bin").string(), nullptr);
  train(cfg, (data / "b.bin").string(), nullptr);
  const bool same_ckpt = slurp(data / "a.bin") == slurp(data / "b.bin") &&
                         slurp(data / "a.bin.best") == slurp(data / "b.bin.best");

  const std::string bytes = slurp(data / "a.bin");
  const Checkpoint ck = load_checkpoint((data / "a.bin").string());
  const bool ckpt_rt = encode_checkpoint(ck) == bytes;

  std::mt19937_64 rng(8);
  Raster rgb{5, 9, 3, std::vector<std::uint8_t>(135)}, grey{6, 4, 1, std::vector<std::uint8_t>(24)};
  for (auto& p : rgb.pixels) p = static_cast<std::uint8_t>(rng());
  for (auto& p : grey.pixels) p = static_cast<std::uint8_t>(rng());
  write_ppm((data / "x.ppm").string(), rgb);
  write_pgm((data / "x.pgm").string(), grey);
  const bool pnm_rt = read_ppm((data / "x.ppm").string()).pixels == rgb.pixels &&
                      read_pgm((data / "x.pgm").string()).pixels == grey.pixels;

  std::vector<std::int64_t> counts(25);
  for (auto& c : counts) c = static_cast<std::int64_t>(rng() % 997);
  const MetricReport rep = compute_metrics(ConfusionMatrix::from_counts(5, counts), {1, 2, 4});
  const json j = report_to_json(rep);
  const MetricReport back = report_from_json(json::parse(j.dump()));
  const bool rep_rt = report_to_json(back) == j && back.mIoU == rep.mIoU && back.mF1 == rep.mF1 &&
                      back.OA == rep.OA && back.confusion == rep.confusion;

  auto yn = [](bool b) { return b ? "yes" : "no"; };
  return {same_ckpt && ckpt_rt && pnm_rt && rep_rt,
          std::string("identical checkpoints ") + yn(same_ckpt) + ", checkpoint " + yn(ckpt_rt) + ", PPM/PGM " +
              yn(pnm_rt) + ", report JSON " + yn(rep_rt)};
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"scan oracle equivalence", scan_equivalence},
      {"gradient suite", gradient_suite},
      {"discretization limit", discretization_limit},
      {"metrics oracle", metrics_oracle},
      {"loss identities", loss_identities},
      {"parameter budget", parameter_budget},
      {"desk-scale training", desk_training},
      {"ablation harness", ablations},
      {"linear scaling", linear_scaling},
      {"determinism and round-trips", determinism_round_trips},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
