#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmunet/config.hpp"
#include "cmunet/dataset.hpp"
#include "cmunet/metrics.hpp"
#include "cmunet/model.hpp"

namespace cmunet {

struct Batch {
  Tensor images;  // [B,3,H,W]
  LabelMap labels;
};

Batch make_batch(const std::vector<SegSample>& samples, DType dtype);

struct EpochLog {
  std::int64_t epoch = 0;
  double train_loss = 0;
  double val_mIoU = 0;
  double lr = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  double best_mIoU = 0;
  std::int64_t parameters = 0;
  MetricReport final_report;
};

ConfusionMatrix evaluate(CmUnet& model, const std::vector<SegSample>& samples,
                         std::int64_t batch_size, bool tta);

// Trains per `cfg` on the dataset at cfg.data.root. Writes `out_path` after
// every epoch (and once before training), `out_path.best` on each new best
// validation mIoU, and `out_path.log.jsonl`: the effective config first, then
// one line per epoch. `progress` receives a human-readable line per epoch.
TrainResult train(const RunConfig& cfg, const std::string& out_path, std::ostream* progress);

}  // namespace cmunet
