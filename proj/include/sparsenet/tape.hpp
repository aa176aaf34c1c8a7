#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "sparsenet/tensor.hpp"

namespace sparsenet {

// Records backward closures in forward order and replays them in reverse.
// A tape belongs to one forward pass of one model and is not thread-safe.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { steps_.push_back(std::move(backward_fn)); }

  // Seeds d(root)/d(root) = 1 for a single-element root and replays.
  void backward(const Var<T>& root) {
    if (root->size() != 1) {
      throw ShapeError("backward() needs a scalar root, got shape " + to_string(root->shape()));
    }
    root->ensure_grad()[0] = T{1};
    replay();
  }

  // Seeds the root gradient with an explicit upstream value.
  void backward(const Var<T>& root, std::span<const T> seed) {
    if (seed.size() != root->size()) throw ShapeError("backward seed size does not match root");
    auto g = root->ensure_grad();
    std::copy(seed.begin(), seed.end(), g.begin());
    replay();
  }

  void clear() { steps_.clear(); }
  std::size_t size() const noexcept { return steps_.size(); }

 private:
  void replay() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

  std::vector<std::function<void()>> steps_;
};

// Gradient destination for an op input, or nullptr when the input is constant.
template <typename T>
T* grad_sink(const Var<T>& v) {
  return v->requires_grad() ? v->ensure_grad().data() : nullptr;
}

}  // namespace sparsenet
