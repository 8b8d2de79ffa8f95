#pragma once

#include <string>
#include <vector>

#include "gfrnet/data.hpp"
#include "gfrnet/model.hpp"

namespace gfrnet {

// C x C pixel counts indexed [gt][pred]; ignore pixels are excluded, so the
// total equals the number of evaluated pixels and matrices merge by addition.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void accumulate(const LabelMap& pred, const GroundTruth& gt);
  void merge(const ConfusionMatrix& other);

  int64_t at(int gt_class, int pred_class) const {
    return counts_[static_cast<size_t>(gt_class) * static_cast<size_t>(classes_) +
                   static_cast<size_t>(pred_class)];
  }
  int num_classes() const { return classes_; }
  int64_t total() const;

 private:
  int classes_;
  std::vector<int64_t> counts_;
};

struct EvalMetrics {
  std::vector<double> per_class_iou;  // NaN marks classes with TP+FP+FN = 0
  double mean_iou = 0;
  double pixel_acc = 0;
  double mean_acc = 0;
};

// IoU_c = TP/(TP+FP+FN); absent classes are excluded from the means.
EvalMetrics metrics(const ConfusionMatrix& cm);

// Unweighted mean over finite entries; the reduction behind mean_iou.
double mean_over_present(const std::vector<double>& values);

struct StageRow {
  std::string stage;  // "coarse", "ru1", ...
  double mean_iou = 0;
  double pixel_acc = 0;
};

struct EvalReport {
  std::vector<StageRow> stages;  // one row per supervised map, coarse first
  EvalMetrics final_stage;
};

// Evaluates every stage map against full-resolution ground truth: scores are
// bilinearly upsampled to the input size, argmaxed, and accumulated. Samples
// shard across threads; the merge is exact integer addition.
EvalReport evaluate_model(const ArchConfig& cfg, const ModelParams& params,
                          const std::vector<Sample>& samples, int threads = 1);

}  // namespace gfrnet
