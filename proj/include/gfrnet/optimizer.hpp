#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gfrnet/tensor.hpp"

namespace gfrnet {

// base_lr * (1 - iter/max_iter)^power; requires 0 <= iter <= max_iter, max_iter > 0.
double poly_lr(double base_lr, int64_t iter, int64_t max_iter, double power);

struct SgdConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 0.9;
  int64_t max_iter = 1;
  // L2 decay is applied to weights only unless decay_all also includes
  // biases and batch-norm gamma/beta.
  bool decay_all = false;
  // Learning-rate multiplier per parameter group; absent groups use 1.
  std::map<std::string, double> group_lr;

  double group_scale(const std::string& group) const;
};

template <typename T>
struct SgdParam {
  TensorT<T>* value = nullptr;
  const TensorT<T>* grad = nullptr;
  bool decay = true;
  double lr_scale = 1.0;
};

// Stochastic gradient descent with momentum, L2 weight decay folded into the
// gradient, and the poly schedule:
//   g' = grad + weight_decay * param
//   v  = momentum * v + g'
//   param -= lr_scale * poly_lr(iter) * v
// The parameter list must keep its order and shapes across steps; the
// iteration counter advances once per step.
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(std::move(cfg)) {}

  void step(const std::vector<SgdParam<T>>& params);

  int64_t iter() const { return iter_; }
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  int64_t iter_ = 0;
  std::vector<TensorT<T>> velocity_;
};

}  // namespace gfrnet
