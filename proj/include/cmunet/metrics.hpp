#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "cmunet/losses.hpp"
#include "cmunet/tensor.hpp"

namespace cmunet {

// counts[t * K + p] = pixels of true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t num_classes = 2);

  void update(std::span<const std::int32_t> pred, std::span<const std::int32_t> target);
  void merge(const ConfusionMatrix& other);

  std::int64_t num_classes() const { return k_; }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const {
    return counts_[static_cast<std::size_t>(truth * k_ + pred)];
  }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }
  static ConfusionMatrix from_counts(std::int64_t num_classes, std::vector<std::int64_t> counts);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::int64_t k_;
  std::vector<std::int64_t> counts_;
};

// Per-pixel argmax over the class axis of [B,K,H,W]; ties go to the lowest index.
LabelMap argmax_classes(const Tensor& logits);

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double iou = 0;
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;
  std::vector<std::int64_t> included_classes;
  double mF1 = 0;
  double mIoU = 0;
  double OA = 0;
  ConfusionMatrix confusion;
};

MetricReport compute_metrics(const ConfusionMatrix& cm,
                             const std::vector<std::int64_t>& included_classes);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace cmunet
