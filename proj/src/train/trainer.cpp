#include "cmunet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>

#include "cmunet/augment.hpp"
#include "cmunet/checkpoint.hpp"
#include "cmunet/losses.hpp"
#include "cmunet/optim.hpp"
#include "cmunet/tta.hpp"

namespace cmunet {

Batch make_batch(const std::vector<SegSample>& samples, DType dtype) {
  if (samples.empty()) throw DataError("make_batch: no samples");
  const auto C = samples[0].image.dim(0), H = samples[0].height, W = samples[0].width;
  Batch b;
  b.images = Tensor::empty({static_cast<std::int64_t>(samples.size()), C, H, W}, dtype);
  b.labels = {static_cast<std::int64_t>(samples.size()), H, W, {}};
  b.labels.values.reserve(static_cast<std::size_t>(b.labels.pixels()));
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto dst = b.images.data<T>();
    std::size_t o = 0;
    for (const auto& s : samples) {
      if (s.height != H || s.width != W || s.image.dim(0) != C) {
        throw DataError("make_batch: sample '" + s.id + "' has a different size");
      }
      for (float v : s.image.data<float>()) dst[o++] = static_cast<T>(v);
      b.labels.values.insert(b.labels.values.end(), s.mask.begin(), s.mask.end());
    }
  });
  return b;
}

ConfusionMatrix evaluate(CmUnet& model, const std::vector<SegSample>& samples,
                         std::int64_t batch_size, bool tta) {
  ConfusionMatrix cm(model.config().num_classes);
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<SegSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                       samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch b = make_batch(chunk, model.dtype());
    const LabelMap pred = tta_predict(model, b.images, tta);
    cm.update(pred.values, b.labels.values);
  }
  return cm;
}

namespace {

void write_checkpoint(const std::string& path, const CmUnet& model, const RunConfig& cfg,
                      std::int64_t epoch, const AdamW& opt, double best) {
  save_checkpoint(path, make_checkpoint(model, cfg, epoch, &opt, {{"best_val_mIoU", best}}));
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::string& out_path, std::ostream* progress) {
  cfg.validate();
  set_deterministic(cfg.train.deterministic);
  const DatasetMeta meta = load_meta(cfg.data.root);
  if (meta.num_classes != cfg.model.num_classes) {
    throw DataError("dataset has " + std::to_string(meta.num_classes) +
                    " classes, config expects " + std::to_string(cfg.model.num_classes));
  }
  const auto train_set = load_samples(cfg.data.root, meta, meta.train);
  const auto val_set = load_samples(cfg.data.root, meta, meta.val);
  if (train_set.empty()) throw DataError(cfg.data.root + ": empty training split");

  CmUnet model(cfg.model, cfg.train.seed);
  AdamW opt(model.named_parameters(), AdamWConfig{0.9, 0.999, 1e-8, cfg.train.weight_decay});
  const AugmentConfig aug{cfg.data.hflip, cfg.data.vflip, cfg.data.rotate, cfg.data.scale,
                          cfg.data.crop};

  std::ofstream log(out_path + ".log.jsonl");
  if (!log) throw DataError(out_path + ".log.jsonl: cannot write");
  log << nlohmann::json{{"config", run_config_to_json(cfg)}}.dump() << '\n';

  TrainResult result;
  result.parameters = count_parameters(model);
  write_checkpoint(out_path, model, cfg, 0, opt, 0.0);

  const auto n = static_cast<std::int64_t>(train_set.size());
  const std::int64_t steps_per_epoch = (n + cfg.train.batch_size - 1) / cfg.train.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.train.epochs;
  std::int64_t step = 0;
  std::vector<std::size_t> order(train_set.size());

  for (std::int64_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(sample_seed(cfg.train.seed, "__order__", epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    model.set_training(true);
    double loss_sum = 0;
    double lr = cfg.train.lr;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const std::int64_t begin = s * cfg.train.batch_size;
      const std::int64_t end = std::min(n, begin + cfg.train.batch_size);
      std::vector<SegSample> batch(static_cast<std::size_t>(end - begin));
#pragma omp parallel for schedule(static)
      for (std::int64_t i = begin; i < end; ++i) {
        const auto& src = train_set[order[static_cast<std::size_t>(i)]];
        std::mt19937_64 rng(sample_seed(cfg.train.seed, src.id, epoch));
        batch[static_cast<std::size_t>(i - begin)] = augment(src, aug, rng);
      }
      const Batch b = make_batch(batch, cfg.model.dtype);
      opt.zero_grad();
      const ModelOutputs outputs = model.forward(b.images);
      const LossBreakdown loss = total_loss(outputs, b.labels, cfg.model.aux_weight);
      loss.total.backward();
      lr = cosine_lr(cfg.train.lr, step, total_steps);
      opt.step(lr);
      ++step;
      loss_sum += loss.total.item() * static_cast<double>(end - begin);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n);
    entry.lr = lr;
    if (!val_set.empty()) {
      result.final_report = compute_metrics(evaluate(model, val_set, cfg.train.batch_size, cfg.train.tta),
                                            cfg.model.metric_classes());
      entry.val_mIoU = result.final_report.mIoU;
    }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(entry);

    log << nlohmann::json{{"epoch", entry.epoch},
                          {"train_loss", entry.train_loss},
                          {"val_mIoU", entry.val_mIoU},
                          {"lr", entry.lr}}
               .dump()
        << '\n';
    log.flush();
    if (progress) {
      *progress << "epoch " << epoch << "  loss " << entry.train_loss << "  val mIoU "
                << entry.val_mIoU << "  (" << entry.seconds << " s)\n";
      progress->flush();
    }
    const bool improved = epoch == 0 || entry.val_mIoU > result.best_mIoU;
    if (improved) result.best_mIoU = entry.val_mIoU;
    write_checkpoint(out_path, model, cfg, epoch + 1, opt, result.best_mIoU);
    if (improved) write_checkpoint(out_path + ".best", model, cfg, epoch + 1, opt, result.best_mIoU);
  }
  return result;
}

}  // namespace cmunet
