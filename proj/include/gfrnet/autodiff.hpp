#pragma once

#include <functional>
#include <vector>

#include "gfrnet/tensor.hpp"

namespace gfrnet {

enum class GateMode { mul, add };
enum class BnMode { train, infer };

// Per-layer batch-norm bookkeeping. gamma/beta live in the graph as leaf
// nodes; the running statistics are updated in place during train-mode
// forward passes and read in infer mode.
template <typename T>
struct BatchNormState {
  TensorT<T> running_mean;  // (1, c, 1, 1)
  TensorT<T> running_var;   // (1, c, 1, 1), elementwise >= 0
  T epsilon = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  BnMode mode = BnMode::train;

  static BatchNormState make(int64_t channels);
};

enum class OpKind {
  leaf,
  conv3x3,
  maxpool2x2,
  relu,
  batchnorm,
  bilinear_up2x,
  concat_channels,
  gate_combine,
  softmax_xent,
  weighted_sum,
};

const char* op_name(OpKind k);

// Reverse-mode tape over the fixed operation set of the architecture.
// Node ids are indices in construction order, which is a topological order.
// A graph instance is single-threaded; distinct instances over shared
// immutable inputs may run concurrently.
template <typename T>
class Graph {
 public:
  int leaf(TensorT<T> value);

  // 3x3 correlation (no kernel flip), stride 1, zero padding 1.
  // w: (c_out, c_in, 3, 3); b: (1, c_out, 1, 1).
  int conv3x3(int x, int w, int b);

  // Non-overlapping 2x2 windows, stride 2; requires even spatial dims.
  // Backward routes to the argmax, first occurrence in row-major scan on ties.
  int maxpool2x2(int x);

  int relu(int x);

  int batchnorm(int x, int gamma, int beta, BatchNormState<T>& state);

  // 2x upsampling with half-pixel centers: s = (o + 0.5)/2 - 0.5 clamped to
  // [0, dim-1]; backward scatters the same weights.
  int bilinear_up2x(int x);

  // Channels stacked a-then-b; batch and spatial dims must match.
  int concat_channels(int a, int b);

  // mul: u * v elementwise; add: u + v.
  int gate_combine(int u, int v, GateMode mode);

  // Per-pixel softmax cross-entropy, mean over non-ignored pixels of
  // class_weights[t] * (-log p_t). Produces a scalar node; zero loss and
  // gradient when every pixel is ignored.
  int softmax_xent(int scores, const LabelMap& target, std::vector<T> class_weights,
                   int ignore_index);

  // sum_i weights[i] * xs[i]; all inputs of equal shape.
  int weighted_sum(std::vector<int> xs, std::vector<T> weights);

  // Accumulates gradients for every node on a path to `root`. Without a seed
  // the root must be scalar and is seeded with 1; otherwise the seed tensor
  // (same shape as the root value) is used.
  void backward(int root, const TensorT<T>* seed = nullptr);

  const TensorT<T>& value(int id) const { return nodes_[check(id)].value; }
  const TensorT<T>& grad(int id) const { return nodes_[check(id)].grad; }
  OpKind op(int id) const { return nodes_[check(id)].op; }
  const std::vector<int>& parents(int id) const { return nodes_[check(id)].parents; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    OpKind op;
    std::vector<int> parents;
    TensorT<T> value;
    TensorT<T> grad;
    std::function<void(Graph&)> backprop;
  };

  int add(OpKind op, std::vector<int> parents, TensorT<T> value,
          std::function<void(Graph&)> backprop);
  int check(int id) const;
  TensorT<T>& grad_mut(int id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

// Forward kernels shared with the inference/evaluation paths.
template <typename T>
TensorT<T> bilinear_up2x_tensor(const TensorT<T>& x);

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& scores);

// Per-pixel argmax over channels; ties resolve to the lowest class index.
template <typename T>
LabelMap argmax_channels(const TensorT<T>& scores);

}  // namespace gfrnet
