#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "gfrnet/autodiff.hpp"
#include "gfrnet/tensor.hpp"

namespace gfrnet {

enum class Variant { lrn, gfrnet };
enum class Mode { train, infer };

struct ArchConfig {
  int depth = 5;                    // encoder stages; each halves the spatial dims
  std::vector<int> stage_channels;  // one entry per stage
  int num_classes = 0;
  int gate_channels = 0;            // 0: per-gate default = shallow input channels
  Variant variant = Variant::gfrnet;
  GateMode gate_mode = GateMode::mul;
  int in_channels = 3;
  // 0: refinement k reads encoder feature D-k; 1: one stage shallower, for
  // experimentation. With 1 the first refinement upsamples twice so
  // resolutions still line up.
  int skip_offset = 0;

  int num_refinements() const { return depth - 2; }
  int num_stage_maps() const { return depth - 1; }
  void validate() const;  // throws ConfigError
};

// One learnable tensor plus its optimizer metadata.
struct ParamEntry {
  std::string name;
  Tensor value;
  bool decay = true;    // weight-decay eligible
  std::string group;    // "encoder" or "decoder"
};

struct BnEntry {
  std::string name;
  BatchNormState<Real> state;
};

// Every learnable weight plus batch-norm running statistics, in a fixed
// construction order. Same-named parameters are initialized from
// seed-and-name-derived streams, so variants sharing a submodule (encoder,
// coarse head) share its initialization for a given seed.
struct ModelParams {
  std::vector<ParamEntry> learnable;
  std::vector<BnEntry> bn;

  int param_index(const std::string& name) const;
  int bn_index(const std::string& name) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, int> param_idx_;
  std::unordered_map<std::string, int> bn_idx_;
};

ModelParams make_params(const ArchConfig& cfg, uint64_t seed);

// Same structure with zero-valued tensors; checkpoint loading fills it.
ModelParams make_param_shapes(const ArchConfig& cfg);

// Node ids of one forward pass; stage_maps holds the coarse map followed by
// each refinement output, all with num_classes channels.
struct ForwardPass {
  std::vector<int> features;     // f_1 .. f_D
  std::vector<int> stage_maps;   // Pm coarse, refinement 1 .. D-2
  std::vector<int> param_nodes;  // parallel to params.learnable
};

// Builds the whole forward graph. Train mode updates batch-norm running
// statistics in place; infer mode leaves params untouched.
ForwardPass run_forward(Graph<Real>& g, const Tensor& image, ModelParams& params,
                        const ArchConfig& cfg, Mode mode);

struct InferResult {
  LabelMap labels;                   // full-resolution argmax of the last stage
  std::vector<Tensor> stage_scores;  // optional: every stage upsampled to input size
};

// Inference path: batch norm in infer mode, final map upsampled to the input
// resolution, per-pixel argmax with ties to the lowest class index.
InferResult run_inference(const Tensor& image, ModelParams& params, const ArchConfig& cfg,
                          bool keep_stage_scores = false);

// Binary checkpoint: magic, config block, then little-endian named tensors
// (learnables and running statistics) as 64-bit floats. Bit-exact round trip.
void save_checkpoint(const std::string& path, const ArchConfig& cfg, const ModelParams& params);

struct Checkpoint {
  ArchConfig config;
  ModelParams params;
};

Checkpoint load_checkpoint(const std::string& path);

const char* variant_name(Variant v);
const char* gate_mode_name(GateMode m);

}  // namespace gfrnet
