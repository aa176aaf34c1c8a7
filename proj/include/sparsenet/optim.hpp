#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparsenet/tensor.hpp"

namespace sparsenet {

template <typename T>
struct Parameter {
  std::string name;  // e.g. "block2.layer3.conv1.weight"
  Var<T> tensor;
  bool decay_enabled = true;
};

// SGD with Nesterov momentum, no dampening. Per parameter:
//   g <- grad + weight_decay * w
//   v <- momentum * v + g
//   w <- w - lr * (g + momentum * v)
template <typename T>
class SgdNesterov {
 public:
  SgdNesterov(T momentum, T weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<const Parameter<T>> params, T lr) {
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const auto& p : params) velocity_.emplace_back(p.tensor->size(), T{0});
    }
    if (velocity_.size() != params.size()) throw ShapeError("sgd: parameter set changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& w = *params[k].tensor;
      auto& v = velocity_[k];
      if (v.size() != w.size()) throw ShapeError("sgd: velocity shape mismatch for " + params[k].name);
      if (!w.has_grad()) w.ensure_grad();
      auto grad = w.grad();
      check_finite<T>(grad, "gradient of " + params[k].name);
      const T decay = params[k].decay_enabled ? weight_decay_ : T{0};
      auto values = w.values();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const T g = grad[i] + decay * values[i];
        v[i] = momentum_ * v[i] + g;
        values[i] -= lr * (g + momentum_ * v[i]);
      }
    }
  }

  T momentum() const { return momentum_; }
  T weight_decay() const { return weight_decay_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }
  std::vector<std::vector<T>>& velocity() { return velocity_; }

 private:
  T momentum_;
  T weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace sparsenet
