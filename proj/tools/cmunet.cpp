#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cmunet/checkpoint.hpp"
#include "cmunet/checks.hpp"
#include "cmunet/config.hpp"
#include "cmunet/dataset.hpp"
#include "cmunet/image_io.hpp"
#include "cmunet/metrics.hpp"
#include "cmunet/model.hpp"
#include "cmunet/parallel.hpp"
#include "cmunet/ssm.hpp"
#include "cmunet/trainer.hpp"
#include "cmunet/tta.hpp"

using namespace cmunet;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---- generate ----------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  SynthOptions opts;
};

int cmd_generate(const GenerateArgs& a) {
  validate_synth_options(a.opts);
  const DatasetMeta meta = synth_generate(a.out, a.opts);
  std::cout << "wrote " << meta.train.size() << " train / " << meta.val.size() << " val samples ("
            << a.opts.size << "x" << a.opts.size << ", " << a.opts.classes << " classes) to "
            << a.out << '\n';
  return kOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::int64_t epochs = -1;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.data.empty()) cfg.data.root = a.data;
  if (a.epochs >= 0) cfg.train.epochs = a.epochs;
  cfg.validate();
  if (cfg.data.root.empty()) throw ConfigError("no dataset: pass --data or set data.root");
  const TrainResult r = train(cfg, a.out, &std::cout);
  std::cout << "parameters " << r.parameters << "  best val mIoU " << std::fixed
            << std::setprecision(4) << r.best_mIoU << '\n';
  return kOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string report;
  bool tta = false;
  std::string split = "val";
  std::int64_t batch = 8;
};

void print_report(const MetricReport& r, const std::vector<std::string>& names) {
  std::cout << std::left << std::setw(14) << "class" << std::right << std::setw(10) << "F1"
            << std::setw(10) << "IoU" << '\n';
  for (std::int64_t c : r.included_classes) {
    const auto& m = r.per_class[static_cast<std::size_t>(c)];
    const std::string name =
        c < static_cast<std::int64_t>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                    : "class" + std::to_string(c);
    std::cout << std::left << std::setw(14) << name << std::right << std::fixed
              << std::setprecision(4) << std::setw(10) << m.f1 << std::setw(10) << m.iou << '\n';
  }
  std::cout << "mF1 " << r.mF1 << "  mIoU " << r.mIoU << "  OA " << r.OA << '\n';
}

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const RunConfig cfg = checkpoint_run_config(ckpt);
  const DatasetMeta meta = load_meta(a.data);
  if (meta.num_classes != cfg.model.num_classes) {
    std::cerr << "error: checkpoint has " << cfg.model.num_classes << " classes, dataset has "
              << meta.num_classes << '\n';
    return kFailure;
  }
  const auto& ids = a.split == "train" ? meta.train : meta.val;
  CmUnet model(cfg.model, cfg.train.seed);
  restore_model(model, ckpt);
  const auto samples = load_samples(a.data, meta, ids);
  const ConfusionMatrix cm = evaluate(model, samples, a.batch, a.tta);
  const MetricReport report = compute_metrics(cm, cfg.model.metric_classes());
  write_json_file(a.report, report_to_json(report));
  print_report(report, meta.class_names);
  return kOk;
}

// ---- predict -----------------------------------------------------------------

struct PredictArgs {
  std::string ckpt;
  std::string image;
  std::string out;
  bool tta = false;
};

int cmd_predict(const PredictArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const RunConfig cfg = checkpoint_run_config(ckpt);
  CmUnet model(cfg.model, cfg.train.seed);
  restore_model(model, ckpt);
  const Raster raster = read_ppm(a.image);
  if (raster.height % 32 != 0 || raster.width % 32 != 0) {
    throw DataError(a.image + ": height and width must be multiples of 32");
  }
  const Tensor image = raster_to_image(raster).to(cfg.model.dtype);
  const LabelMap pred =
      tta_predict(model, reshape(image, {1, 3, raster.height, raster.width}), a.tta);
  Raster mask{raster.height, raster.width, 1, {}};
  mask.pixels.assign(pred.values.begin(), pred.values.end());
  write_pgm(a.out, mask);
  std::cout << "wrote " << a.out << '\n';
  return kOk;
}

// ---- bench-scan --------------------------------------------------------------

struct BenchArgs {
  std::vector<std::int64_t> lengths{4096, 8192, 16384, 32768};
  std::int64_t channels = 16;
  std::int64_t state = 8;
  std::int64_t batch = 1;
  int reps = 5;
  int warmup = 3;
  std::uint64_t seed = 42;
  std::string report;
};

struct Timing {
  double mean_ms = 0;
  double std_ms = 0;
  int reps = 0;
};

template <class F>
Timing time_it(F&& fn, int warmup, int reps) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  Timing t;
  t.reps = reps;
  t.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / reps;
  double var = 0;
  for (double v : ms) var += (v - t.mean_ms) * (v - t.mean_ms);
  t.std_ms = reps > 1 ? std::sqrt(var / (reps - 1)) : 0.0;
  return t;
}

json timing_json(const Timing& t) {
  return {{"mean_ms", t.mean_ms}, {"std_ms", t.std_ms}, {"reps", t.reps}};
}

int cmd_bench_scan(const BenchArgs& a) {
  if (a.lengths.empty()) throw ConfigError("--lengths is empty");
  for (std::size_t i = 0; i < a.lengths.size(); ++i) {
    if (a.lengths[i] < 1 || (i > 0 && a.lengths[i] <= a.lengths[i - 1])) {
      throw ConfigError("--lengths must be positive and ascending");
    }
  }
  if (a.reps < 5) throw ConfigError("--reps must be at least 5");
  if (a.channels < 1 || a.state < 1 || a.batch < 1) throw ConfigError("sizes must be positive");
  set_deterministic(false);
  NoGradGuard no_grad;

  std::mt19937_64 rng(a.seed);
  const DType dt = DType::kFloat32;
  const Tensor a_mat = Tensor::uniform({a.channels, a.state}, rng, -4.0, -0.1, dt);
  const Tensor d = Tensor::randn({a.channels}, rng, dt);

  json entries = json::array();
  std::vector<double> par_ms, seq_ms;
  std::cout << std::setw(8) << "L" << std::setw(22) << "parallel ms" << std::setw(22)
            << "sequential ms" << '\n';
  for (std::int64_t L : a.lengths) {
    const ssm::ScanInputs in{Tensor::randn({a.batch, L, a.channels}, rng, dt),
                             Tensor::uniform({a.batch, L, a.channels}, rng, 1e-3, 0.1, dt),
                             Tensor::randn({a.batch, L, a.state}, rng, dt),
                             Tensor::randn({a.batch, L, a.state}, rng, dt)};
    // Correctness gate against the sequential recurrence.
    const Tensor ys = ssm::selective_scan(in, a_mat, d, ssm::ScanImpl::kSequential);
    const Tensor yp = ssm::selective_scan(in, a_mat, d, ssm::ScanImpl::kParallel);
    double diff = 0, mag = 0;
    for (std::int64_t i = 0; i < ys.numel(); ++i) {
      diff = std::max(diff, std::abs(ys.at(i) - yp.at(i)));
      mag = std::max(mag, std::abs(ys.at(i)));
    }
    const double rel = diff / std::max(mag, 1e-30);
    if (!(rel <= 1e-5)) {
      std::cerr << "error: parallel scan disagrees with the sequential scan at L=" << L
                << " (rel " << rel << ")\n";
      return kFailure;
    }
    const Timing tp = time_it([&] { ssm::selective_scan(in, a_mat, d, ssm::ScanImpl::kParallel); },
                              a.warmup, a.reps);
    const Timing ts = time_it([&] { ssm::selective_scan(in, a_mat, d, ssm::ScanImpl::kSequential); },
                              a.warmup, a.reps);
    par_ms.push_back(tp.mean_ms);
    seq_ms.push_back(ts.mean_ms);
    entries.push_back({{"length", L},
                       {"parallel", timing_json(tp)},
                       {"sequential", timing_json(ts)},
                       {"parity_rel_error", rel}});
    std::ostringstream p, s;
    p << std::fixed << std::setprecision(3) << tp.mean_ms << " +- " << tp.std_ms;
    s << std::fixed << std::setprecision(3) << ts.mean_ms << " +- " << ts.std_ms;
    std::cout << std::setw(8) << L << std::setw(22) << p.str() << std::setw(22) << s.str() << '\n';
  }
  json ratios = json::array();
  for (std::size_t i = 1; i < a.lengths.size(); ++i) {
    const double rp = par_ms[i] / par_ms[i - 1];
    const double rs = seq_ms[i] / seq_ms[i - 1];
    ratios.push_back({{"from", a.lengths[i - 1]}, {"to", a.lengths[i]}, {"parallel", rp}, {"sequential", rs}});
    std::cout << "ratio " << a.lengths[i] << "/" << a.lengths[i - 1] << "  parallel " << std::fixed
              << std::setprecision(3) << rp << "  sequential " << rs << '\n';
  }
  json report = {{"batch", a.batch},
                 {"channels", a.channels},
                 {"state", a.state},
                 {"dtype", "real32"},
                 {"entries", entries},
                 {"ratios", ratios},
                 {"environment",
                  {{"threads", num_threads()},
                   {"deterministic", false},
                   {"clock", "steady_clock"},
                   {"warmup", a.warmup},
                   {"chunks_at_first_length", ssm::scan_chunk_count(a.lengths.front(), a.batch)}}}};
  if (!a.report.empty()) write_json_file(a.report, report);
  return kOk;
}

// ---- check -------------------------------------------------------------------

struct CheckArgs {
  std::string suite = "all";
  std::uint64_t seed = 1234;
  double inject = 0.0;
};

int cmd_check(const CheckArgs& a) {
  if (a.inject != 0.0) ssm::set_parallel_scan_perturbation(a.inject);
  const auto results = run_check_suite(a.suite, a.seed, std::cout);
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed == 0 ? kOk : kFailure;
}

// ---- info --------------------------------------------------------------------

struct InfoArgs {
  std::string ckpt;
  std::string preset;
};

int cmd_info(const InfoArgs& a) {
  RunConfig cfg;
  std::unique_ptr<CmUnet> model;
  if (!a.ckpt.empty()) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    cfg = checkpoint_run_config(ckpt);
    model = std::make_unique<CmUnet>(cfg.model, cfg.train.seed);
    restore_model(*model, ckpt);
    std::cout << "checkpoint " << a.ckpt << "  epoch " << ckpt.meta.value("epoch", 0) << '\n';
  } else {
    cfg.model = a.preset == "paper" ? ModelConfig::paper_scale() : ModelConfig::mini();
    cfg.validate();
    model = std::make_unique<CmUnet>(cfg.model, cfg.train.seed);
    std::cout << "preset " << a.preset << '\n';
  }
  const ModelConfig& m = cfg.model;
  std::cout << "encoder channels " << m.encoder_channels[0] << "," << m.encoder_channels[1] << ","
            << m.encoder_channels[2] << "," << m.encoder_channels[3] << "  blocks "
            << m.blocks_per_stage[0] << "," << m.blocks_per_stage[1] << ","
            << m.blocks_per_stage[2] << "," << m.blocks_per_stage[3] << "  classes "
            << m.num_classes << "  state " << m.state_size << "  msaa " << m.use_msaa
            << "  multi_output " << m.multi_output << "  dtype " << dtype_name(m.dtype) << '\n';
  for (const auto& [name, count] : model->parameter_breakdown()) {
    std::cout << "  " << std::left << std::setw(12) << name << std::right << std::setw(12) << count
              << '\n';
  }
  const std::int64_t total = count_parameters(*model);
  std::cout << "total parameters " << total << " (" << std::fixed << std::setprecision(2)
            << total / 1e6 << " M)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();

  CLI::App app{"CM-UNet style segmentation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic segmentation dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--num", gen.opts.num, "Number of samples")->capture_default_str();
  g->add_option("--size", gen.opts.size, "Image side, multiple of 32")->capture_default_str();
  g->add_option("--classes", gen.opts.classes, "Classes including background, 2..8")
      ->capture_default_str();
  g->add_option("--seed", gen.opts.seed, "Random seed")->capture_default_str();
  g->add_option("--val-fraction", gen.opts.val_fraction, "Share of samples held out")
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand(
      "train",
      "Train a model. Config defaults: train.epochs 30, batch_size 8, lr 6e-4, schedule cosine, "
      "weight_decay 0.01, seed 42, deterministic true; data.crop 64; ablation.msaa and "
      "ablation.multi_output true; model = mini preset");
  t->add_option("--config", tr.config, "Run config JSON (sections model, train, data, ablation)");
  t->add_option("--data", tr.data, "Dataset root (overrides data.root)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--epochs", tr.epochs, "Override train.epochs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint and write a metric report");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset root")->required();
  e->add_option("--report", ev.report, "Report JSON path")->required();
  e->add_flag("--tta", ev.tta, "Average over four flips");
  e->add_option("--split", ev.split, "train or val")
      ->check(CLI::IsMember({"train", "val"}))
      ->capture_default_str();
  e->add_option("--batch", ev.batch, "Evaluation batch size")->check(CLI::PositiveNumber);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict a class mask for one PPM image");
  p->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  p->add_option("--image", pr.image, "Input PPM")->required();
  p->add_option("--out", pr.out, "Output PGM mask")->required();
  p->add_flag("--tta", pr.tta, "Average over four flips");

  BenchArgs be;
  auto* b = app.add_subcommand("bench-scan", "Time the parallel and sequential scans");
  b->alias("bench_scan");
  b->add_option("--lengths", be.lengths, "Ascending sequence lengths")->delimiter(',');
  b->add_option("--channels", be.channels, "Inner channels")->capture_default_str();
  b->add_option("--state", be.state, "State size")->capture_default_str();
  b->add_option("--batch", be.batch, "Batch size")->capture_default_str();
  b->add_option("--reps", be.reps, "Timed repetitions (>= 5)")->capture_default_str();
  b->add_option("--warmup", be.warmup, "Untimed warmup runs")->capture_default_str();
  b->add_option("--seed", be.seed, "Random seed")->capture_default_str();
  b->add_option("--report", be.report, "Report JSON path");

  CheckArgs ch;
  auto* c = app.add_subcommand("check", "Run invariant suites; exit 1 on any failure");
  c->add_option("--suite", ch.suite, "grads, scan, metrics or all")
      ->check(CLI::IsMember({"grads", "scan", "metrics", "all"}))
      ->capture_default_str();
  c->add_option("--seed", ch.seed, "Random seed")->capture_default_str();
  c->add_option("--inject-scan-fault", ch.inject,
                "Add this value to the first output of every parallel scan (test hook)");

  InfoArgs in;
  auto* i = app.add_subcommand("info", "Print configuration and parameter counts");
  auto* ck = i->add_option("--ckpt", in.ckpt, "Checkpoint");
  i->add_option("--preset", in.preset, "mini or paper, when no checkpoint is given")
      ->check(CLI::IsMember({"mini", "paper"}))
      ->excludes(ck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_predict(pr);
    if (*b) return cmd_bench_scan(be);
    if (*c) return cmd_check(ch);
    if (*i) {
      if (in.ckpt.empty() && in.preset.empty()) in.preset = "mini";
      return cmd_info(in);
    }
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
