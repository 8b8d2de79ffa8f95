#include "gfrnet/eval.hpp"

#include <cmath>
#include <limits>
#include <thread>

namespace gfrnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes),
      counts_(static_cast<size_t>(num_classes) * static_cast<size_t>(num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const GroundTruth& gt) {
  if (pred.n != gt.labels.n || pred.h != gt.labels.h || pred.w != gt.labels.w) {
    throw ShapeError("confusion matrix: prediction and ground truth dims differ");
  }
  for (int64_t i = 0; i < pred.count(); ++i) {
    const int32_t g = gt.labels.v[static_cast<size_t>(i)];
    if (g == gt.ignore_index) continue;
    const int32_t p = pred.v[static_cast<size_t>(i)];
    if (g < 0 || g >= classes_) {
      throw DataError("confusion matrix: ground-truth label " + std::to_string(g) +
                      " >= num_classes " + std::to_string(classes_));
    }
    if (p < 0 || p >= classes_) {
      throw DataError("confusion matrix: predicted label " + std::to_string(p) +
                      " >= num_classes " + std::to_string(classes_));
    }
    ++counts_[static_cast<size_t>(g) * static_cast<size_t>(classes_) + static_cast<size_t>(p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion matrix: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

double mean_over_present(const std::vector<double>& values) {
  double sum = 0;
  int64_t count = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++count;
    }
  }
  if (count == 0) throw DataError("mean_over_present: no present classes");
  return sum / static_cast<double>(count);
}

EvalMetrics metrics(const ConfusionMatrix& cm) {
  const int C = cm.num_classes();
  const int64_t total = cm.total();
  if (total == 0) throw DataError("metrics: empty confusion matrix");

  EvalMetrics out;
  out.per_class_iou.assign(static_cast<size_t>(C), std::numeric_limits<double>::quiet_NaN());
  int64_t trace = 0;
  double acc_sum = 0;
  int64_t acc_classes = 0;
  for (int c = 0; c < C; ++c) {
    const int64_t tp = cm.at(c, c);
    trace += tp;
    int64_t row = 0, col = 0;
    for (int o = 0; o < C; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    const int64_t fn = row - tp;
    const int64_t fp = col - tp;
    if (tp + fp + fn > 0) {
      out.per_class_iou[static_cast<size_t>(c)] =
          static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    }
    if (row > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(row);
      ++acc_classes;
    }
  }
  out.pixel_acc = static_cast<double>(trace) / static_cast<double>(total);
  out.mean_acc = acc_classes > 0 ? acc_sum / static_cast<double>(acc_classes) : 0.0;
  out.mean_iou = mean_over_present(out.per_class_iou);
  return out;
}

EvalReport evaluate_model(const ArchConfig& cfg, const ModelParams& params,
                          const std::vector<Sample>& samples, int threads) {
  if (samples.empty()) throw DataError("evaluate_model: empty sample set");
  const int stages = cfg.num_stage_maps();
  const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(samples.size())));

  std::vector<std::vector<ConfusionMatrix>> shard_cms(
      static_cast<size_t>(nthreads),
      std::vector<ConfusionMatrix>(static_cast<size_t>(stages), ConfusionMatrix(cfg.num_classes)));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(nthreads));

  auto worker = [&](int tid) {
    try {
      ModelParams local = params;  // isolates batch-norm state per thread
      for (size_t i = static_cast<size_t>(tid); i < samples.size(); i += static_cast<size_t>(nthreads)) {
        const Sample& s = samples[i];
        auto res = run_inference(s.image, local, cfg, /*keep_stage_scores=*/true);
        for (int k = 0; k < stages; ++k) {
          shard_cms[static_cast<size_t>(tid)][static_cast<size_t>(k)].accumulate(
              argmax_channels(res.stage_scores[static_cast<size_t>(k)]), s.gt);
        }
      }
    } catch (...) {
      errors[static_cast<size_t>(tid)] = std::current_exception();
    }
  };

  if (nthreads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<ConfusionMatrix> cms(static_cast<size_t>(stages), ConfusionMatrix(cfg.num_classes));
  for (int t = 0; t < nthreads; ++t) {
    for (int k = 0; k < stages; ++k) {
      cms[static_cast<size_t>(k)].merge(shard_cms[static_cast<size_t>(t)][static_cast<size_t>(k)]);
    }
  }

  EvalReport report;
  for (int k = 0; k < stages; ++k) {
    const EvalMetrics m = metrics(cms[static_cast<size_t>(k)]);
    const std::string name = k == 0 ? "coarse" : "ru" + std::to_string(k);
    report.stages.push_back(StageRow{name, m.mean_iou, m.pixel_acc});
    if (k == stages - 1) report.final_stage = m;
  }
  return report;
}

}  // namespace gfrnet
