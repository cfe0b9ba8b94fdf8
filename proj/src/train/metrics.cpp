#include "cmunet/metrics.hpp"

namespace cmunet {

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw DataError("confusion matrix needs at least one class");
}

void ConfusionMatrix::update(std::span<const std::int32_t> pred,
                             std::span<const std::int32_t> target) {
  if (pred.size() != target.size()) {
    throw DataError("confusion update: prediction has " + std::to_string(pred.size()) +
                    " pixels, target " + std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= k_ || target[i] < 0 || target[i] >= k_) {
      throw DataError("confusion update: class index out of range at pixel " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) ++counts_[static_cast<std::size_t>(target[i] * k_ + pred[i])];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DataError("confusion merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

ConfusionMatrix ConfusionMatrix::from_counts(std::int64_t num_classes,
                                             std::vector<std::int64_t> counts) {
  ConfusionMatrix cm(num_classes);
  if (counts.size() != cm.counts_.size()) throw DataError("confusion matrix: wrong entry count");
  for (auto c : counts) {
    if (c < 0) throw DataError("confusion matrix: negative count");
  }
  cm.counts_ = std::move(counts);
  return cm;
}

LabelMap argmax_classes(const Tensor& logits) {
  if (logits.ndim() != 4) throw DimensionError("argmax: expected [B,K,H,W]");
  const auto B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const auto P = H * W;
  LabelMap out{B, H, W, std::vector<std::int32_t>(static_cast<std::size_t>(B * P))};
  dispatch_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto z = logits.data<T>();
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t i = 0; i < P; ++i) {
        std::int32_t best = 0;
        for (std::int64_t k = 1; k < K; ++k) {
          if (z[(b * K + k) * P + i] > z[(b * K + best) * P + i]) best = static_cast<std::int32_t>(k);
        }
        out.values[static_cast<std::size_t>(b * P + i)] = best;
      }
    }
  });
  return out;
}

namespace {

double ratio(double num, double den) { return den == 0 ? 0.0 : num / den; }

}  // namespace

MetricReport compute_metrics(const ConfusionMatrix& cm,
                             const std::vector<std::int64_t>& included_classes) {
  const std::int64_t total = cm.total();
  if (total == 0) throw DataError("compute_metrics: empty confusion matrix");
  const std::int64_t K = cm.num_classes();
  MetricReport r;
  r.confusion = cm;
  r.included_classes = included_classes;
  if (r.included_classes.empty()) {
    for (std::int64_t k = 0; k < K; ++k) r.included_classes.push_back(k);
  }
  std::int64_t trace = 0;
  for (std::int64_t c = 0; c < K; ++c) {
    std::int64_t pred_c = 0, true_c = 0;
    for (std::int64_t j = 0; j < K; ++j) {
      pred_c += cm.at(j, c);
      true_c += cm.at(c, j);
    }
    const auto tp = static_cast<double>(cm.at(c, c));
    const double fp = static_cast<double>(pred_c) - tp;
    const double fn = static_cast<double>(true_c) - tp;
    trace += cm.at(c, c);
    ClassMetrics m;
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
    m.iou = ratio(tp, tp + fp + fn);
    r.per_class.push_back(m);
  }
  for (auto c : r.included_classes) {
    if (c < 0 || c >= K) throw DataError("compute_metrics: included class out of range");
    r.mF1 += r.per_class[static_cast<std::size_t>(c)].f1;
    r.mIoU += r.per_class[static_cast<std::size_t>(c)].iou;
  }
  r.mF1 /= static_cast<double>(r.included_classes.size());
  r.mIoU /= static_cast<double>(r.included_classes.size());
  r.OA = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& m : report.per_class) {
    per_class.push_back(
        {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"iou", m.iou}});
  }
  nlohmann::json rows = nlohmann::json::array();
  const auto K = report.confusion.num_classes();
  for (std::int64_t t = 0; t < K; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::int64_t p = 0; p < K; ++p) row.push_back(report.confusion.at(t, p));
    rows.push_back(row);
  }
  return {{"per_class", per_class},
          {"included_classes", report.included_classes},
          {"mF1", report.mF1},
          {"mIoU", report.mIoU},
          {"OA", report.OA},
          {"confusion_matrix", rows}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    for (const auto& m : j.at("per_class")) {
      r.per_class.push_back({m.at("precision").get<double>(), m.at("recall").get<double>(),
                             m.at("f1").get<double>(), m.at("iou").get<double>()});
    }
    r.included_classes = j.at("included_classes").get<std::vector<std::int64_t>>();
    r.mF1 = j.at("mF1").get<double>();
    r.mIoU = j.at("mIoU").get<double>();
    r.OA = j.at("OA").get<double>();
    const auto& rows = j.at("confusion_matrix");
    const auto K = static_cast<std::int64_t>(rows.size());
    std::vector<std::int64_t> counts;
    for (const auto& row : rows) {
      if (static_cast<std::int64_t>(row.size()) != K) throw FormatError("report: ragged confusion matrix");
      for (const auto& v : row) counts.push_back(v.get<std::int64_t>());
    }
    r.confusion = ConfusionMatrix::from_counts(K, std::move(counts));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metric report: ") + e.what());
  }
}

}  // namespace cmunet
