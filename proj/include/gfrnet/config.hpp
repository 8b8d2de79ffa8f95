#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfrnet/model.hpp"

namespace gfrnet {

struct DatasetSpec {
  enum class Kind { shapes, ambiguous, manifest };
  Kind kind = Kind::shapes;
  // generator parameters
  int size = 0;
  int n_train = 0;
  int n_test = 0;
  // manifest parameters
  std::string train_manifest;
  std::string test_manifest;
};

// One experiment = one JSON document. Unknown keys are rejected; `seeds` and
// `skip_offset` are the only optional keys (the former is consumed by the
// ablation command, the latter defaults to 0).
struct RunConfig {
  uint64_t seed = 0;
  ArchConfig arch;
  int crop_h = 0, crop_w = 0;
  double base_lr = 0;
  double momentum = 0;
  double weight_decay = 0;
  double power = 0;
  int64_t max_iter = 0;
  std::vector<double> stage_weights;
  bool class_balancing = false;
  DatasetSpec dataset;
  std::string output_dir;
  std::vector<uint64_t> seeds;

  void validate() const;  // throws ConfigError
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace gfrnet
