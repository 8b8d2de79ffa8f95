#pragma once

#include <functional>

#include "gfrnet/config.hpp"
#include "gfrnet/data.hpp"
#include "gfrnet/eval.hpp"

namespace gfrnet {

struct Dataset {
  std::vector<Sample> train, test;
  Palette palette;
};

// Generator datasets are built in memory from seed-derived streams; manifest
// datasets load from disk (with palette.txt next to the manifest when present).
Dataset build_dataset(const DatasetSpec& spec, uint64_t seed, int num_classes);

struct TrainLogRow {
  int64_t iter = 0;
  std::vector<double> stage_losses;  // unweighted l_1 .. l_{D-1}
  double total = 0;
  double lr = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogRow> log;
};

// Called after every completed iteration (1-based); the callback decides when
// to write checkpoints.
using IterCallback =
    std::function<void(int64_t iter, const TrainLogRow& row, const ModelParams& params)>;

// Seeded end to end: init, epoch shuffling, crops, and updates all derive
// from cfg.seed, so identical configs give bitwise-identical parameters.
TrainResult train_model(const RunConfig& cfg, const Dataset& data,
                        const IterCallback& after_iter = nullptr);

struct AblationRow {
  std::string cell;  // "gfrnet-mul", "gfrnet-add", "lrn"
  std::string ds;    // "with" or "without"
  uint64_t seed = 0;
  std::string stage;
  double mean_iou = 0;
};

// Trains {gfrnet-mul, gfrnet-add, lrn} x {with-DS, without-DS} for every seed
// in base.seeds and evaluates each cell on the seed's test split. Cells of one
// seed share the dataset and the same-named parameter initialization; the
// without-DS cells zero every stage weight except the last. One row per
// (cell, ds, seed, stage).
std::vector<AblationRow> run_ablation(const RunConfig& base, int threads = 1);

}  // namespace gfrnet
