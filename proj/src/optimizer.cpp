#include "gfrnet/optimizer.hpp"

#include <cmath>
#include <string>

namespace gfrnet {

double poly_lr(double base_lr, int64_t iter, int64_t max_iter, double power) {
  if (max_iter <= 0) throw ConfigError("poly_lr: max_iter must be positive");
  if (iter < 0 || iter > max_iter) {
    throw ConfigError("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                      std::to_string(max_iter) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

double SgdConfig::group_scale(const std::string& group) const {
  const auto it = group_lr.find(group);
  return it == group_lr.end() ? 1.0 : it->second;
}

template <typename T>
void Sgd<T>::step(const std::vector<SgdParam<T>>& params) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.value->shape());
  }
  if (velocity_.size() != params.size()) {
    throw ShapeError("sgd_step: parameter count changed between steps");
  }
  const double lr = poly_lr(cfg_.base_lr, iter_, cfg_.max_iter, cfg_.power);
  for (size_t i = 0; i < params.size(); ++i) {
    const SgdParam<T>& p = params[i];
    TensorT<T>& v = velocity_[i];
    if (!(p.value->shape() == p.grad->shape()) || !(p.value->shape() == v.shape())) {
      throw ShapeError("sgd_step: param/grad/velocity shape mismatch " + p.value->shape().str() +
                       " vs " + p.grad->shape().str() + " vs " + v.shape().str());
    }
    const T wd = static_cast<T>((cfg_.decay_all || p.decay) ? cfg_.weight_decay : 0.0);
    const T mom = static_cast<T>(cfg_.momentum);
    const T step_lr = static_cast<T>(lr * p.lr_scale);
    TensorT<T>& x = *p.value;
    const TensorT<T>& g = *p.grad;
    for (int64_t j = 0; j < x.size(); ++j) {
      v[j] = mom * v[j] + (g[j] + wd * x[j]);
      x[j] -= step_lr * v[j];
    }
    x.check_finite("sgd_step");
  }
  ++iter_;
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace gfrnet
