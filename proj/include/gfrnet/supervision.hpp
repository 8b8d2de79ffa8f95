#pragma once

#include <vector>

#include "gfrnet/autodiff.hpp"
#include "gfrnet/tensor.hpp"

namespace gfrnet {

// Integer label image plus the reserved index excluded from losses and metrics.
struct GroundTruth {
  LabelMap labels;
  int ignore_index = 255;
};

struct LossBreakdown {
  std::vector<double> per_stage;      // l_1 .. l_{D-1}, unweighted
  double total = 0;                   // sum_k stage_weights[k] * per_stage[k]
  std::vector<double> stage_weights;
  int total_node = -1;                // scalar graph node, backward entry point
};

// Nearest-neighbour label downsampling at source index floor((dst + 0.5) * scale)
// per axis; both axes must shrink by the same power-of-2 ratio. Labels are
// never interpolated and ignore_index propagates like any other label.
GroundTruth resize_gt(const GroundTruth& gt, int64_t target_h, int64_t target_w);

// Median-frequency balancing: freq_c = count_c / total over present classes,
// weight_c = median(present freqs) / freq_c; absent classes get 0.
std::vector<double> class_weights(const std::vector<int64_t>& pixel_counts);

// Per-class pixel counts of non-ignored labels.
std::vector<int64_t> count_labels(const GroundTruth& gt, int num_classes);

// Weighted cross-entropy per stage map against the ground truth resized to
// that map's resolution; total combines them with the per-stage weights.
LossBreakdown stage_losses(Graph<Real>& g, const std::vector<int>& stage_maps,
                           const GroundTruth& gt, const std::vector<Real>& class_wt,
                           const std::vector<double>& stage_weights);

}  // namespace gfrnet
