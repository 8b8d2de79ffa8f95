#include "gfrnet/supervision.hpp"

#include <algorithm>
#include <string>

namespace gfrnet {

namespace {

int64_t axis_ratio(int64_t src, int64_t dst, const char* axis) {
  if (dst <= 0 || src % dst != 0) {
    throw ShapeError(std::string("resize_gt: target ") + axis + " " + std::to_string(dst) +
                     " does not divide source " + std::to_string(src));
  }
  const int64_t r = src / dst;
  if ((r & (r - 1)) != 0) {
    throw ShapeError(std::string("resize_gt: ") + axis + " ratio " + std::to_string(r) +
                     " is not a power of 2");
  }
  return r;
}

}  // namespace

GroundTruth resize_gt(const GroundTruth& gt, int64_t target_h, int64_t target_w) {
  const LabelMap& src = gt.labels;
  const int64_t rh = axis_ratio(src.h, target_h, "height");
  const int64_t rw = axis_ratio(src.w, target_w, "width");
  if (rh != rw) {
    throw ShapeError("resize_gt: axis ratios differ (" + std::to_string(rh) + " vs " +
                     std::to_string(rw) + ")");
  }
  GroundTruth out{LabelMap(src.n, target_h, target_w), gt.ignore_index};
  // floor((dst + 0.5) * r) = dst * r + r / 2 for integer power-of-2 r
  for (int64_t n = 0; n < src.n; ++n) {
    for (int64_t y = 0; y < target_h; ++y) {
      const int64_t sy = y * rh + rh / 2;
      for (int64_t x = 0; x < target_w; ++x) {
        out.labels.at(n, y, x) = src.at(n, sy, x * rw + rw / 2);
      }
    }
  }
  return out;
}

std::vector<double> class_weights(const std::vector<int64_t>& pixel_counts) {
  int64_t total = 0;
  for (int64_t c : pixel_counts) {
    if (c < 0) throw ShapeError("class_weights: negative pixel count");
    total += c;
  }
  if (total == 0) throw DataError("class_weights: all pixel counts are zero");

  std::vector<double> freqs;
  for (int64_t c : pixel_counts) {
    if (c > 0) freqs.push_back(static_cast<double>(c) / static_cast<double>(total));
  }
  std::sort(freqs.begin(), freqs.end());
  const size_t m = freqs.size();
  const double median = m % 2 == 1 ? freqs[m / 2] : 0.5 * (freqs[m / 2 - 1] + freqs[m / 2]);

  std::vector<double> weights(pixel_counts.size(), 0.0);
  for (size_t c = 0; c < pixel_counts.size(); ++c) {
    if (pixel_counts[c] > 0) {
      weights[c] = median / (static_cast<double>(pixel_counts[c]) / static_cast<double>(total));
    }
  }
  return weights;
}

std::vector<int64_t> count_labels(const GroundTruth& gt, int num_classes) {
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  for (int32_t v : gt.labels.v) {
    if (v == gt.ignore_index) continue;
    if (v < 0 || v >= num_classes) {
      throw DataError("count_labels: label " + std::to_string(v) + " out of range [0," +
                      std::to_string(num_classes) + ")");
    }
    ++counts[v];
  }
  return counts;
}

LossBreakdown stage_losses(Graph<Real>& g, const std::vector<int>& stage_maps,
                           const GroundTruth& gt, const std::vector<Real>& class_wt,
                           const std::vector<double>& stage_weights) {
  if (stage_maps.empty()) throw ShapeError("stage_losses: no stage maps");
  if (stage_weights.size() != stage_maps.size()) {
    throw ShapeError("stage_losses: " + std::to_string(stage_weights.size()) + " weights for " +
                     std::to_string(stage_maps.size()) + " stages");
  }
  for (double w : stage_weights) {
    if (!(w >= 0)) throw ShapeError("stage_losses: stage weights must be non-negative");
  }

  LossBreakdown out;
  out.stage_weights = stage_weights;
  std::vector<int> loss_nodes;
  std::vector<Real> wts;
  for (size_t k = 0; k < stage_maps.size(); ++k) {
    const Shape s = g.value(stage_maps[k]).shape();
    const GroundTruth resized = resize_gt(gt, s.h, s.w);
    const int l = g.softmax_xent(stage_maps[k], resized.labels, class_wt, gt.ignore_index);
    loss_nodes.push_back(l);
    wts.push_back(static_cast<Real>(stage_weights[k]));
    out.per_stage.push_back(static_cast<double>(g.value(l)[0]));
  }
  out.total_node = g.weighted_sum(loss_nodes, wts);
  out.total = static_cast<double>(g.value(out.total_node)[0]);
  return out;
}

}  // namespace gfrnet
